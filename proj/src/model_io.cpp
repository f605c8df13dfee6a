#include "phyg/model_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "phyg/version.hpp"

namespace phyg {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

const std::array<std::uint32_t, 256>& crc_table() {
    static const auto table = make_crc_table();
    return table;
}

constexpr char kMagic[4] = {'P', 'H', 'Y', 'G'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    const char* take(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw std::runtime_error("truncated model file: " + path_);
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint16_t u16() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(2));
        return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    }
    std::uint32_t u32() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(8));
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::string& buf_;
    const std::string& path_;
    std::size_t pos_ = 0;
};

std::string meta_suffix(const ModelMeta& meta) {
    std::string name = meta.name.empty() ? "model" : meta.name;
    for (char& ch : name)
        if (ch == ' ' || ch == '|' || ch == ';' || ch == '=') ch = '_';
    std::ostringstream os;
    os << " | name=" << name << " seed=" << meta.train_seed << " provenance=" << meta.provenance;
    return os.str();
}

void parse_descriptor(const std::string& descriptor, ArchitectureSpec& spec, ModelMeta& meta) {
    std::string arch_text = descriptor;
    auto bar = descriptor.find(" | ");
    if (bar != std::string::npos) {
        arch_text = descriptor.substr(0, bar);
        std::istringstream is(descriptor.substr(bar + 3));
        std::string kv;
        while (is >> kv) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
            if (key == "name")
                meta.name = value;
            else if (key == "seed")
                meta.train_seed = std::strtoull(value.c_str(), nullptr, 10);
            else if (key == "provenance")
                meta.provenance = value;
        }
    }
    spec = ArchitectureSpec::from_text(arch_text);
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
    const auto& table = crc_table();
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

std::uint32_t crc32_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string buf = ss.str();
    return crc32(buf.data(), buf.size());
}

void save_model(const ModelHandle& model, const std::string& path) {
    model.spec.validate();
    if (model.params.size() != model.spec.param_count())
        throw std::invalid_argument("model parameter vector does not match its architecture");
    ensure_finite(model.params, "model parameters");

    std::string out;
    out.append(kMagic, 4);
    put_u16(out, static_cast<std::uint16_t>(kModelFormatVersion));
    const std::string descriptor = model.spec.to_text() + meta_suffix(model.meta);
    put_u32(out, static_cast<std::uint32_t>(descriptor.size()));
    out.append(descriptor);
    put_u64(out, static_cast<std::uint64_t>(model.params.size()));
    for (double v : model.params.data) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
    put_u32(out, crc32(out.data(), out.size()));

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("cannot write model file: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw std::runtime_error("short write to model file: " + path);
}

ModelHandle load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    Reader r(buf, path);
    const char* magic = r.take(4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("bad magic in model file: " + path);
    std::uint16_t version = r.u16();
    if (version != kModelFormatVersion)
        throw std::runtime_error("unsupported model format version " + std::to_string(version) +
                                 " in " + path);
    std::uint32_t desc_len = r.u32();
    std::string descriptor(r.take(desc_len), desc_len);
    std::uint64_t count = r.u64();

    // Validate the framing and checksum before interpreting any content.
    const std::size_t expected_size = r.pos() + count * 4 + 4;
    if (buf.size() < expected_size) throw std::runtime_error("truncated model file: " + path);
    if (buf.size() > expected_size)
        throw std::runtime_error("trailing bytes in model file: " + path);
    const std::size_t body_end = expected_size - 4;
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[body_end + i]))
                  << (8 * i);
    if (stored != crc32(buf.data(), body_end))
        throw std::runtime_error("checksum failure in model file: " + path);

    ModelHandle m;
    parse_descriptor(descriptor, m.spec, m.meta);
    if (count != static_cast<std::uint64_t>(m.spec.param_count()))
        throw std::runtime_error("parameter count does not match architecture in " + path);

    m.params = Tensor::zeros({static_cast<int>(count)});
    for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t bits = r.u32();
        float f;
        std::memcpy(&f, &bits, 4);
        m.params.data[static_cast<std::size_t>(i)] = static_cast<double>(f);
    }
    ensure_finite(m.params, "model parameters");
    return m;
}

}  // namespace phyg
