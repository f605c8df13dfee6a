#include "phyg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace phyg {

std::int64_t shape_volume(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension");
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_volume(shape) != static_cast<std::int64_t>(data.size()))
        throw std::invalid_argument("tensor data length does not match shape " +
                                    shape_to_string(shape));
}

Tensor Tensor::zeros(std::vector<int> shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(std::vector<int> shape, double value) {
    auto n = shape_volume(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

void ensure_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw std::runtime_error(std::string("non-finite value in ") + what);
    }
}

void ensure_finite(const Tensor& t, const char* what) { ensure_finite(t.data, what); }

Tensor axpy_step(const Tensor& x, const Tensor& grad, double rate) {
    if (!x.same_shape(grad))
        throw std::invalid_argument("axpy_step shape mismatch: " + shape_to_string(x.shape) +
                                    " vs " + shape_to_string(grad.shape));
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= rate * grad.data[i];
    return out;
}

void clamp_inplace(Tensor& t, double lo, double hi) {
    for (double& v : t.data) v = v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace phyg
