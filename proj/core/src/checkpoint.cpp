#include "cotune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace cotune {

namespace {

constexpr char kMagic[8] = {'C', 'O', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& entries) {
    std::string out;
    out.append(kMagic, 8);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t d : t.shape()) put_u64(out, d);
        for (double v : t.values()) put_f64(out, v);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.bytes(8) != std::string(kMagic, 8)) throw IoError("checkpoint: bad magic in '" + path + "'");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::map<std::string, Tensor> entries;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::string name = r.bytes(r.u32());
        Shape shape(r.u32());
        for (auto& d : shape) d = r.u64();
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = r.f64();
        entries.emplace(name, Tensor::from(std::move(shape), std::move(data)));
    }
    return entries;
}

std::uint64_t checkpoint_checksum(const std::map<std::string, Tensor>& entries) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : entries) {
        h = fnv1a64(name, h);
        h = fnv1a64(t.shape().data(), t.shape().size() * sizeof(std::size_t), h);
        h = fnv1a64(t.values(), h);
    }
    return h;
}

}  // namespace cotune
