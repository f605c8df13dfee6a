#include "phyg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "phyg/rng.hpp"

namespace phyg {

void Dataset::validate() const {
    if (images.size() != labels.size())
        throw std::invalid_argument("dataset image/label counts differ");
    if (class_count < 1) throw std::invalid_argument("dataset class count must be positive");
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= class_count)
            throw std::invalid_argument("dataset label out of range at index " +
                                        std::to_string(i));
        for (double p : images[i].data)
            if (!(p >= 0.0 && p <= 1.0))
                throw std::invalid_argument("dataset pixel outside [0,1] at index " +
                                            std::to_string(i));
    }
}

std::vector<std::vector<std::int64_t>> Dataset::indices_by_class() const {
    std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[static_cast<std::size_t>(labels[i])].push_back(static_cast<std::int64_t>(i));
    return by_class;
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803u;
constexpr std::uint32_t kLabelsMagic = 0x00000801u;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint32_t be32(const std::string& buf, std::size_t off, const std::string& path) {
    if (off + 4 > buf.size()) throw std::runtime_error("truncated idx file: " + path);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data() + off);
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const std::string ibuf = read_file(images_path);
    const std::string lbuf = read_file(labels_path);

    if (be32(ibuf, 0, images_path) != kImagesMagic)
        throw std::runtime_error("bad magic in idx images file: " + images_path);
    if (be32(lbuf, 0, labels_path) != kLabelsMagic)
        throw std::runtime_error("bad magic in idx labels file: " + labels_path);

    const std::uint32_t n_images = be32(ibuf, 4, images_path);
    const std::uint32_t rows = be32(ibuf, 8, images_path);
    const std::uint32_t cols = be32(ibuf, 12, images_path);
    const std::uint32_t n_labels = be32(lbuf, 4, labels_path);
    if (n_images != n_labels)
        throw std::runtime_error("idx image/label counts differ: " + std::to_string(n_images) +
                                 " vs " + std::to_string(n_labels));
    const std::size_t pixels = std::size_t{rows} * cols;
    if (ibuf.size() != 16 + std::size_t{n_images} * pixels)
        throw std::runtime_error("truncated idx images file: " + images_path);
    if (lbuf.size() != 8 + std::size_t{n_labels})
        throw std::runtime_error("truncated idx labels file: " + labels_path);

    Dataset ds;
    ds.name = images_path;
    ds.images.reserve(n_images);
    ds.labels.reserve(n_images);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n_images; ++i) {
        Tensor img = Tensor::zeros({static_cast<int>(rows), static_cast<int>(cols), 1});
        const unsigned char* src =
            reinterpret_cast<const unsigned char*>(ibuf.data() + 16 + std::size_t{i} * pixels);
        for (std::size_t p = 0; p < pixels; ++p) img.data[p] = static_cast<double>(src[p]) / 255.0;
        ds.images.push_back(std::move(img));
        int label = static_cast<int>(static_cast<unsigned char>(lbuf[8 + i]));
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    ds.class_count = max_label + 1;
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    if (ds.images.empty()) throw std::invalid_argument("cannot save an empty dataset");
    const auto& shape = ds.images[0].shape;
    if (shape.size() != 3 || shape[2] != 1)
        throw std::invalid_argument("idx export requires HxWx1 grayscale images");
    for (const Tensor& img : ds.images)
        if (img.shape != shape) throw std::invalid_argument("idx export requires uniform shapes");

    std::ofstream iout(images_path, std::ios::binary | std::ios::trunc);
    if (!iout) throw std::runtime_error("cannot write idx images file: " + images_path);
    put_be32(iout, kImagesMagic);
    put_be32(iout, static_cast<std::uint32_t>(ds.images.size()));
    put_be32(iout, static_cast<std::uint32_t>(shape[0]));
    put_be32(iout, static_cast<std::uint32_t>(shape[1]));
    std::vector<unsigned char> row;
    for (const Tensor& img : ds.images) {
        row.resize(img.data.size());
        for (std::size_t p = 0; p < img.data.size(); ++p)
            row[p] = static_cast<unsigned char>(std::lround(img.data[p] * 255.0));
        iout.write(reinterpret_cast<const char*>(row.data()),
                   static_cast<std::streamsize>(row.size()));
    }
    if (!iout) throw std::runtime_error("short write to idx images file: " + images_path);

    std::ofstream lout(labels_path, std::ios::binary | std::ios::trunc);
    if (!lout) throw std::runtime_error("cannot write idx labels file: " + labels_path);
    put_be32(lout, kLabelsMagic);
    put_be32(lout, static_cast<std::uint32_t>(ds.labels.size()));
    for (int label : ds.labels) lout.put(static_cast<char>(static_cast<unsigned char>(label)));
    if (!lout) throw std::runtime_error("short write to idx labels file: " + labels_path);
}

Dataset synth_generate(int classes, int per_class, std::uint64_t geometry_seed,
                       double noise_sigma) {
    if (classes < 2) throw std::invalid_argument("synthetic generator needs >= 2 classes");
    if (per_class < 1) throw std::invalid_argument("synthetic generator needs >= 1 per class");
    if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");

    constexpr int kSide = 16;
    constexpr double kPi = 3.14159265358979323846;

    // Each class is a bright Gaussian blob whose center sits on a ring at a
    // class-indexed angle (two ring radii once the ring gets crowded), with a
    // small seeded jitter of the center. Localized features survive pooling,
    // so both linear probes and small conv nets separate the classes.
    std::vector<double> cys(static_cast<std::size_t>(classes));
    std::vector<double> cxs(static_cast<std::size_t>(classes));
    std::vector<double> sigmas(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        Rng class_rng(seed_combine(geometry_seed, 0xC1A55u, static_cast<std::uint64_t>(c)));
        const double angle =
            2.0 * kPi * c / classes + class_rng.uniform(-0.06, 0.06);
        const double radius = (classes > 12 && c % 2 == 1) ? 3.0 : 4.8;
        cys[static_cast<std::size_t>(c)] = 8.0 + radius * std::sin(angle);
        cxs[static_cast<std::size_t>(c)] = 8.0 + radius * std::cos(angle);
        sigmas[static_cast<std::size_t>(c)] = 1.5 + 0.12 * (c % 3);
    }

    Dataset ds;
    ds.class_count = classes;
    ds.name = "synthetic";
    ds.images.reserve(static_cast<std::size_t>(classes) * per_class);
    ds.labels.reserve(static_cast<std::size_t>(classes) * per_class);
    for (int c = 0; c < classes; ++c) {
        const double cy = cys[static_cast<std::size_t>(c)];
        const double cx = cxs[static_cast<std::size_t>(c)];
        const double two_s2 = 2.0 * sigmas[static_cast<std::size_t>(c)] *
                              sigmas[static_cast<std::size_t>(c)];
        for (int s = 0; s < per_class; ++s) {
            Rng rng(seed_combine(geometry_seed, static_cast<std::uint64_t>(c),
                                 static_cast<std::uint64_t>(s)));
            // Per-sample variation scales with the noise level, so sigma = 0
            // still collapses a class to its prototype. The center jitter
            // leaves a little class overlap (trained models keep bounded
            // logits instead of saturating) and a dim distractor blob at a
            // random spot keeps "bright pixels elsewhere" inside the data
            // manifold.
            const double jitter = 11.0 * noise_sigma;
            const double jy = cy + rng.normal(0.0, jitter);
            const double jx = cx + rng.normal(0.0, jitter);
            const bool distract = noise_sigma > 0.0;
            const double ty = rng.uniform(2.0, kSide - 2.0);
            const double tx = rng.uniform(2.0, kSide - 2.0);
            Tensor img = Tensor::zeros({kSide, kSide, 1});
            for (int y = 0; y < kSide; ++y) {
                for (int x = 0; x < kSide; ++x) {
                    const double dy = (y + 0.5) - jy;
                    const double dx = (x + 0.5) - jx;
                    double v = 0.12 + 0.8 * std::exp(-(dy * dy + dx * dx) / two_s2);
                    if (distract) {
                        const double ey = (y + 0.5) - ty;
                        const double ex = (x + 0.5) - tx;
                        v += 0.30 * std::exp(-(ey * ey + ex * ex) / (2.0 * 1.2 * 1.2));
                        v += rng.normal(0.0, noise_sigma);
                    }
                    img.data[static_cast<std::size_t>(y) * kSide + x] =
                        std::clamp(v, 0.0, 1.0);
                }
            }
            ds.images.push_back(std::move(img));
            ds.labels.push_back(c);
        }
    }
    return ds;
}

Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw std::invalid_argument("subsample fraction must be in (0, 1]");
    auto by_class = ds.indices_by_class();
    std::vector<std::int64_t> keep;
    for (int c = 0; c < ds.class_count; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        if (idx.empty()) continue;
        Rng rng(seed_combine(seed, 0x5AB5u, static_cast<std::uint64_t>(c)));
        rng.shuffle(idx);
        auto take = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(idx.size())));
        if (take == 0)
            throw std::invalid_argument("subsample would empty class " + std::to_string(c));
        keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    }
    std::sort(keep.begin(), keep.end());
    Dataset out;
    out.class_count = ds.class_count;
    out.name = ds.name + "/subsample";
    for (std::int64_t i : keep) {
        out.images.push_back(ds.images[static_cast<std::size_t>(i)]);
        out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::vector<Dataset> split_disjoint(const Dataset& ds, int parts, std::uint64_t seed) {
    if (parts < 2) throw std::invalid_argument("split_disjoint needs >= 2 parts");
    auto by_class = ds.indices_by_class();
    std::vector<std::vector<std::int64_t>> part_indices(static_cast<std::size_t>(parts));
    for (int c = 0; c < ds.class_count; ++c) {
        auto& idx = by_class[static_cast<std::size_t>(c)];
        if (static_cast<int>(idx.size()) < parts)
            throw std::invalid_argument("class " + std::to_string(c) + " has fewer samples (" +
                                        std::to_string(idx.size()) + ") than parts");
        Rng rng(seed_combine(seed, 0xD15Bu, static_cast<std::uint64_t>(c)));
        rng.shuffle(idx);
        for (std::size_t i = 0; i < idx.size(); ++i)
            part_indices[i % static_cast<std::size_t>(parts)].push_back(idx[i]);
    }
    std::vector<Dataset> out;
    for (int p = 0; p < parts; ++p) {
        auto& keep = part_indices[static_cast<std::size_t>(p)];
        std::sort(keep.begin(), keep.end());
        Dataset part;
        part.class_count = ds.class_count;
        part.name = ds.name + "/part" + std::to_string(p);
        for (std::int64_t i : keep) {
            part.images.push_back(ds.images[static_cast<std::size_t>(i)]);
            part.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
        }
        out.push_back(std::move(part));
    }
    return out;
}

}  // namespace phyg
