#include "phyg/model.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "phyg/rng.hpp"

namespace phyg {

LayerSpec LayerSpec::conv(int kh, int kw, int out_channels) {
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.kernel_h = kh;
    l.kernel_w = kw;
    l.channels = out_channels;
    return l;
}

LayerSpec LayerSpec::maxpool(int ph, int pw) {
    LayerSpec l;
    l.kind = LayerKind::MaxPool;
    l.pool_h = ph;
    l.pool_w = pw;
    return l;
}

LayerSpec LayerSpec::dense(int units, bool relu) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.units = units;
    l.relu = relu;
    return l;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec l;
    l.kind = LayerKind::Dropout;
    l.rate = rate;
    return l;
}

LayerSpec LayerSpec::softmax_head(int classes) {
    LayerSpec l;
    l.kind = LayerKind::SoftmaxHead;
    l.units = classes;
    return l;
}

namespace {

struct ShapeCursor {
    bool spatial = true;
    int h = 0, w = 0, c = 0;  // spatial
    std::int64_t n = 0;       // flattened

    std::int64_t flat() const { return spatial ? std::int64_t{h} * w * c : n; }
};

// Walks the layer sequence, checking composition and accumulating the
// parameter count. Used by validate(), param_count() and the net planner.
void walk_layers(const ArchitectureSpec& spec,
                 const std::function<void(const LayerSpec&, const ShapeCursor&,
                                          const ShapeCursor&, std::int64_t, std::int64_t)>& visit) {
    if (spec.in_h <= 0 || spec.in_w <= 0 || spec.in_c <= 0)
        throw std::invalid_argument("architecture input shape must be positive");
    if (spec.classes < 2) throw std::invalid_argument("architecture needs at least 2 classes");
    if (spec.layers.empty()) throw std::invalid_argument("architecture has no layers");

    ShapeCursor cur{true, spec.in_h, spec.in_w, spec.in_c, 0};
    std::int64_t offset = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        ShapeCursor in = cur;
        std::int64_t w_count = 0, b_count = 0;
        switch (l.kind) {
            case LayerKind::Conv: {
                if (!in.spatial)
                    throw std::invalid_argument("conv layer after flatten is not supported");
                if (l.kernel_h <= 0 || l.kernel_w <= 0 || l.channels <= 0)
                    throw std::invalid_argument("conv layer has non-positive geometry");
                int oh = in.h - l.kernel_h + 1;
                int ow = in.w - l.kernel_w + 1;
                if (oh <= 0 || ow <= 0)
                    throw std::invalid_argument("conv kernel does not fit its input");
                w_count = std::int64_t{l.channels} * in.c * l.kernel_h * l.kernel_w;
                b_count = l.channels;
                cur = ShapeCursor{true, oh, ow, l.channels, 0};
                break;
            }
            case LayerKind::MaxPool: {
                if (!in.spatial) throw std::invalid_argument("maxpool after flatten");
                if (l.pool_h <= 0 || l.pool_w <= 0)
                    throw std::invalid_argument("maxpool window must be positive");
                int oh = in.h / l.pool_h;
                int ow = in.w / l.pool_w;
                if (oh <= 0 || ow <= 0)
                    throw std::invalid_argument("maxpool window larger than its input");
                cur = ShapeCursor{true, oh, ow, in.c, 0};
                break;
            }
            case LayerKind::Dense: {
                if (l.units <= 0) throw std::invalid_argument("dense layer must have units > 0");
                std::int64_t fan_in = in.flat();
                w_count = std::int64_t{l.units} * fan_in;
                b_count = l.units;
                cur = ShapeCursor{false, 0, 0, 0, l.units};
                break;
            }
            case LayerKind::Dropout: {
                if (l.rate < 0.0 || l.rate >= 1.0)
                    throw std::invalid_argument("dropout rate must be in [0, 1)");
                cur = in;
                break;
            }
            case LayerKind::SoftmaxHead: {
                if (i + 1 != spec.layers.size())
                    throw std::invalid_argument("softmax head must be the last layer");
                if (l.units != spec.classes)
                    throw std::invalid_argument("softmax head units must equal class count");
                std::int64_t fan_in = in.flat();
                w_count = std::int64_t{l.units} * fan_in;
                b_count = l.units;
                cur = ShapeCursor{false, 0, 0, 0, l.units};
                break;
            }
        }
        visit(l, in, cur, offset, w_count + b_count);
        offset += w_count + b_count;
    }
    if (spec.layers.back().kind != LayerKind::SoftmaxHead)
        throw std::invalid_argument("architecture must end with a softmax head");
}

std::string format_rate(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", rate);
    return buf;
}

}  // namespace

void ArchitectureSpec::validate() const {
    walk_layers(*this, [](const LayerSpec&, const ShapeCursor&, const ShapeCursor&, std::int64_t,
                          std::int64_t) {});
}

std::int64_t ArchitectureSpec::param_count() const {
    std::int64_t total = 0;
    walk_layers(*this, [&](const LayerSpec&, const ShapeCursor&, const ShapeCursor&, std::int64_t,
                           std::int64_t n) { total += n; });
    return total;
}

std::string ArchitectureSpec::to_text() const {
    std::ostringstream os;
    os << "input " << in_h << "x" << in_w << "x" << in_c;
    for (const LayerSpec& l : layers) {
        os << "; ";
        switch (l.kind) {
            case LayerKind::Conv:
                os << "conv " << l.kernel_h << "x" << l.kernel_w << "x" << l.channels << " relu";
                break;
            case LayerKind::MaxPool:
                os << "maxpool " << l.pool_h << "x" << l.pool_w;
                break;
            case LayerKind::Dense:
                os << "dense " << l.units << (l.relu ? " relu" : " linear");
                break;
            case LayerKind::Dropout:
                os << "dropout " << format_rate(l.rate);
                break;
            case LayerKind::SoftmaxHead:
                os << "softmax " << l.units;
                break;
        }
    }
    return os.str();
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& s) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw std::invalid_argument("bad integer '" + s + "' in architecture text");
    return v;
}

std::vector<int> parse_dims(const std::string& s, std::size_t expect) {
    auto parts = split(s, 'x');
    if (parts.size() != expect)
        throw std::invalid_argument("bad dimension list '" + s + "' in architecture text");
    std::vector<int> v;
    for (auto& p : parts) v.push_back(parse_int(p));
    return v;
}

}  // namespace

ArchitectureSpec ArchitectureSpec::from_text(const std::string& text) {
    ArchitectureSpec spec;
    auto clauses = split(text, ';');
    bool have_input = false;
    for (const std::string& raw : clauses) {
        std::string clause = trim(raw);
        if (clause.empty()) continue;
        std::istringstream is(clause);
        std::string word;
        is >> word;
        std::string rest;
        std::getline(is, rest);
        rest = trim(rest);
        if (word == "input") {
            auto d = parse_dims(rest, 3);
            spec.in_h = d[0];
            spec.in_w = d[1];
            spec.in_c = d[2];
            have_input = true;
        } else if (word == "conv") {
            auto parts = split(rest, ' ');
            if (parts.size() != 2 || parts[1] != "relu")
                throw std::invalid_argument("bad conv clause '" + clause + "'");
            auto d = parse_dims(parts[0], 3);
            spec.layers.push_back(LayerSpec::conv(d[0], d[1], d[2]));
        } else if (word == "maxpool") {
            auto d = parse_dims(rest, 2);
            spec.layers.push_back(LayerSpec::maxpool(d[0], d[1]));
        } else if (word == "dense") {
            auto parts = split(rest, ' ');
            if (parts.size() != 2 || (parts[1] != "relu" && parts[1] != "linear"))
                throw std::invalid_argument("bad dense clause '" + clause + "'");
            spec.layers.push_back(LayerSpec::dense(parse_int(parts[0]), parts[1] == "relu"));
        } else if (word == "dropout") {
            char* end = nullptr;
            double rate = std::strtod(rest.c_str(), &end);
            if (end == rest.c_str() || *end != '\0')
                throw std::invalid_argument("bad dropout clause '" + clause + "'");
            spec.layers.push_back(LayerSpec::dropout(rate));
        } else if (word == "softmax") {
            int units = parse_int(rest);
            spec.layers.push_back(LayerSpec::softmax_head(units));
            spec.classes = units;
        } else {
            throw std::invalid_argument("unknown architecture clause '" + clause + "'");
        }
    }
    if (!have_input) throw std::invalid_argument("architecture text missing input clause");
    spec.validate();
    return spec;
}

void quantize_to_f32(Tensor& t) {
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

ModelHandle build_model(const ArchitectureSpec& spec, std::uint64_t init_seed,
                        const std::string& name) {
    spec.validate();
    Tensor params = Tensor::zeros({static_cast<int>(spec.param_count())});
    Rng rng(seed_combine(init_seed, 0x1217u));
    std::int64_t cursor = 0;
    walk_layers(spec, [&](const LayerSpec& l, const ShapeCursor& in, const ShapeCursor&,
                          std::int64_t offset, std::int64_t count) {
        (void)offset;
        if (count == 0) return;
        std::int64_t fan_in = 0;
        std::int64_t w_count = 0;
        if (l.kind == LayerKind::Conv) {
            fan_in = std::int64_t{in.c} * l.kernel_h * l.kernel_w;
            w_count = std::int64_t{l.channels} * fan_in;
        } else {  // dense or softmax head
            fan_in = in.flat();
            w_count = std::int64_t{l.units} * fan_in;
        }
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        for (std::int64_t i = 0; i < w_count; ++i)
            params.data[static_cast<std::size_t>(cursor++)] = rng.uniform(-bound, bound);
        cursor += count - w_count;  // biases stay zero
    });
    quantize_to_f32(params);
    ModelHandle m;
    m.spec = spec;
    m.params = std::move(params);
    m.meta.name = name;
    m.meta.train_seed = init_seed;
    m.meta.provenance = "clean";
    return m;
}

namespace {

ArchitectureSpec assemble(int in_h, int in_w, int in_c, int classes, double rate,
                          std::vector<LayerSpec> layers) {
    ArchitectureSpec spec;
    spec.in_h = in_h;
    spec.in_w = in_w;
    spec.in_c = in_c;
    spec.classes = classes;
    for (auto& l : layers) {
        if (l.kind == LayerKind::Dropout) l.rate = rate;
        spec.layers.push_back(l);
    }
    spec.layers.push_back(LayerSpec::softmax_head(classes));
    spec.validate();
    return spec;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"a", "b", "c", "d", "e", "f", "desk-a", "desk-b", "desk-c", "desk-d", "desk-e",
            "desk-f"};
}

ArchitectureSpec make_preset(const std::string& name, int in_h, int in_w, int in_c, int classes,
                             double dropout_rate) {
    using L = LayerSpec;
    const double r = dropout_rate;
    if (name == "a")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 16), L::conv(3, 3, 16), L::maxpool(2, 2), L::conv(3, 3, 32),
                         L::conv(3, 3, 32), L::maxpool(2, 2), L::dense(256), L::dropout(r),
                         L::dense(256), L::dropout(r)});
    if (name == "b")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 32), L::conv(3, 3, 32), L::maxpool(2, 2), L::conv(3, 3, 64),
                         L::conv(3, 3, 64), L::maxpool(2, 2), L::dense(200), L::dropout(r),
                         L::dense(200), L::dropout(r)});
    if (name == "c")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(5, 5, 16), L::maxpool(2, 2), L::conv(5, 5, 32), L::maxpool(2, 2),
                         L::dense(512), L::dropout(r)});
    if (name == "d")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 64), L::conv(3, 3, 64), L::maxpool(2, 2),
                         L::conv(3, 3, 128), L::conv(3, 3, 128), L::maxpool(2, 2), L::dense(512),
                         L::dropout(r), L::dense(256), L::dropout(r)});
    if (name == "e")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 32), L::conv(3, 3, 32), L::maxpool(2, 2), L::conv(3, 3, 64),
                         L::conv(3, 3, 64), L::maxpool(2, 2), L::dense(512), L::dropout(r),
                         L::dense(256), L::dropout(r), L::dense(256), L::dropout(r)});
    if (name == "f")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 64), L::conv(3, 3, 64), L::maxpool(2, 2),
                         L::conv(3, 3, 128), L::conv(3, 3, 128), L::maxpool(2, 2), L::dense(512),
                         L::dropout(r)});
    if (name == "desk-a")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 8), L::maxpool(2, 2), L::conv(3, 3, 16), L::maxpool(2, 2),
                         L::dense(64), L::dropout(r)});
    if (name == "desk-b")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 12), L::conv(3, 3, 12), L::maxpool(2, 2), L::conv(3, 3, 24),
                         L::maxpool(2, 2), L::dense(96), L::dropout(r), L::dense(48),
                         L::dropout(r)});
    if (name == "desk-c")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(5, 5, 8), L::maxpool(2, 2), L::conv(5, 5, 16), L::maxpool(2, 2),
                         L::dense(80), L::dropout(r)});
    if (name == "desk-d")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 6), L::conv(3, 3, 6), L::maxpool(2, 2), L::conv(3, 3, 12),
                         L::conv(3, 3, 12), L::maxpool(2, 2), L::dense(64), L::dropout(r),
                         L::dense(64), L::dropout(r)});
    if (name == "desk-e")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(3, 3, 8), L::maxpool(2, 2), L::dense(128), L::dropout(r),
                         L::dense(64), L::dropout(r)});
    if (name == "desk-f")
        return assemble(in_h, in_w, in_c, classes, r,
                        {L::conv(5, 5, 12), L::maxpool(2, 2), L::conv(3, 3, 24), L::maxpool(2, 2),
                         L::dense(96), L::dropout(r)});
    throw std::invalid_argument("unknown architecture preset '" + name + "'");
}

}  // namespace phyg
