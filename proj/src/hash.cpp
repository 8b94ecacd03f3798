#include "heatrank/io/hash.hpp"

#include <cstdio>
#include <memory>

#include "heatrank/error.hpp"

namespace heatrank {

std::string hash_file(const std::string& path) {
    struct Closer {
        void operator()(std::FILE* f) const {
            if (f) std::fclose(f);
        }
    };
    std::unique_ptr<std::FILE, Closer> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open for hashing: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f.get())) > 0) h = fnv1a64(buf, n, h);
    return hash_hex(h);
}

}  // namespace heatrank
