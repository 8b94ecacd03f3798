#include "heatrank/io/tensor_file.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>

namespace heatrank::tio {

namespace {

constexpr char kMagic[8] = {'H', 'R', 'T', 'E', 'N', '0', '0', '1'};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32(std::string& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void save_f32(const std::string& path, const Tensor& t, const std::string& meta_json) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(buf, static_cast<uint32_t>(d));
    put_u32(buf, static_cast<uint32_t>(meta_json.size()));
    buf.append(meta_json);
    for (size_t i = 0; i < t.size(); ++i) {
        const uint32_t bits = std::bit_cast<uint32_t>(static_cast<float>(t[i]));
        put_u32(buf, bits);
    }
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);
    if (std::fwrite(buf.data(), 1, buf.size(), f.get()) != buf.size())
        throw IoError("short write: " + path);
}

LoadedTensor load(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    std::fseek(f.get(), 0, SEEK_END);
    const long len = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    std::string buf(static_cast<size_t>(len), '\0');
    if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
        throw IoError("short read: " + path);
    if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a tensor file (bad magic): " + path);

    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    size_t off = 8;
    const uint32_t rank = get_u32(p + off);
    off += 4;
    if (rank == 0 || rank > 8 || buf.size() < off + 4 * rank)
        throw IoError("corrupt tensor header: " + path);
    std::vector<int> shape;
    size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i, off += 4) {
        const uint32_t d = get_u32(p + off);
        shape.push_back(static_cast<int>(d));
        count *= d;
    }
    if (buf.size() < off + 4) throw IoError("corrupt tensor header: " + path);
    const uint32_t mlen = get_u32(p + off);
    off += 4;
    if (buf.size() < off + mlen + 4 * count) throw IoError("truncated tensor file: " + path);

    LoadedTensor out;
    out.meta_json = buf.substr(off, mlen);
    off += mlen;
    Tensor t(shape);
    for (size_t i = 0; i < count; ++i, off += 4)
        t[i] = static_cast<double>(std::bit_cast<float>(get_u32(p + off)));
    out.t = std::move(t);
    return out;
}

}  // namespace heatrank::tio
