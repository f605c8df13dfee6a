#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace phyg {

// Dense n-dimensional array of real scalars, row-major. The universal value
// for images, logits, gradients and flat parameter vectors. Scalars are kept
// in double precision in memory; the model file format stores parameters as
// 32-bit floats (see model_io).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<double> data_);

    static Tensor zeros(std::vector<int> shape);
    static Tensor filled(std::vector<int> shape, double value);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

std::int64_t shape_volume(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Throws std::runtime_error naming `what` if any element is NaN/Inf.
void ensure_finite(const Tensor& t, const char* what);
void ensure_finite(const std::vector<double>& v, const char* what);

// Gradients of one scalar loss with respect to the input image and the flat
// parameter vector. Either side may be empty depending on what was requested.
struct GradientPair {
    Tensor wrt_input;
    Tensor wrt_params;
};

// Elementwise x - rate * grad. Shapes must match.
Tensor axpy_step(const Tensor& x, const Tensor& grad, double rate);

// Elementwise clamp into [lo, hi], in place.
void clamp_inplace(Tensor& t, double lo, double hi);

}  // namespace phyg
