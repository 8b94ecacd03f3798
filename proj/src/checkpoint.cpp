#include "heatrank/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>

#include <nlohmann/json.hpp>

namespace heatrank {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kFormatVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) { put_u64(buf, std::bit_cast<uint64_t>(d)); }

uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

void append_params(std::string& buf, const Model& m) {
    for (const Layer& l : m.layers) {
        if (const auto* c = std::get_if<Conv2d>(&l)) {
            for (double v : c->w.values()) put_f64(buf, v);
            for (double v : c->b) put_f64(buf, v);
        } else if (const auto* d = std::get_if<Dense>(&l)) {
            for (double v : d->w.values()) put_f64(buf, v);
            for (double v : d->b) put_f64(buf, v);
        } else if (const auto* b = std::get_if<BatchNorm>(&l)) {
            for (double v : b->gamma) put_f64(buf, v);
            for (double v : b->beta) put_f64(buf, v);
            for (double v : b->running_mean) put_f64(buf, v);
            for (double v : b->running_var) put_f64(buf, v);
        }
    }
}

json layer_to_json(const Layer& l) {
    if (const auto* c = std::get_if<Conv2d>(&l))
        return {{"kind", "conv2d"}, {"in", c->in_ch}, {"out", c->out_ch}, {"k", c->ksize}, {"pad", c->pad}};
    if (const auto* d = std::get_if<Dense>(&l))
        return {{"kind", "dense"}, {"in", d->in_dim}, {"out", d->out_dim}};
    if (const auto* b = std::get_if<BatchNorm>(&l))
        return {{"kind", "batchnorm"}, {"channels", b->channels}, {"eps", b->eps}, {"momentum", b->momentum}};
    if (std::holds_alternative<ReLU>(l)) return {{"kind", "relu"}};
    if (std::holds_alternative<MaxPool2>(l)) return {{"kind", "maxpool2"}};
    if (std::holds_alternative<GlobalAvgPool>(l)) return {{"kind", "global-avg-pool"}};
    return {{"kind", "flatten"}};
}

Layer layer_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "conv2d") {
        Conv2d c;
        c.in_ch = j.at("in").get<int>();
        c.out_ch = j.at("out").get<int>();
        c.ksize = j.at("k").get<int>();
        c.pad = j.at("pad").get<int>();
        c.w = Tensor({c.out_ch, c.in_ch, c.ksize, c.ksize});
        c.b.assign(static_cast<size_t>(c.out_ch), 0.0);
        return c;
    }
    if (kind == "dense") {
        Dense d;
        d.in_dim = j.at("in").get<int>();
        d.out_dim = j.at("out").get<int>();
        d.w = Tensor({d.out_dim, d.in_dim});
        d.b.assign(static_cast<size_t>(d.out_dim), 0.0);
        return d;
    }
    if (kind == "batchnorm") {
        BatchNorm b;
        b.channels = j.at("channels").get<int>();
        b.eps = j.at("eps").get<double>();
        b.momentum = j.value("momentum", 0.1);
        b.gamma.assign(static_cast<size_t>(b.channels), 0.0);
        b.beta.assign(static_cast<size_t>(b.channels), 0.0);
        b.running_mean.assign(static_cast<size_t>(b.channels), 0.0);
        b.running_var.assign(static_cast<size_t>(b.channels), 0.0);
        return b;
    }
    if (kind == "relu") return ReLU{};
    if (kind == "maxpool2") return MaxPool2{};
    if (kind == "global-avg-pool") return GlobalAvgPool{};
    if (kind == "flatten") return Flatten{};
    throw IoError("unknown layer kind '" + kind + "' in checkpoint");
}

}  // namespace

void save_model(const std::string& path, const Model& m, const std::string& meta_json) {
    json header;
    header["format_version"] = kFormatVersion;
    header["input"] = {m.in_ch, m.in_h, m.in_w};
    header["classes"] = m.classes;
    header["canonized"] = m.canonized;
    header["layers"] = json::array();
    for (const Layer& l : m.layers) header["layers"].push_back(layer_to_json(l));
    header["meta"] = json::parse(meta_json);

    std::string params;
    append_params(params, m);

    const std::string hj = header.dump();
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u64(buf, hj.size());
    buf.append(hj);
    put_u64(buf, params.size() / 8);
    buf.append(params);

    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    if (std::fwrite(buf.data(), 1, buf.size(), f.get()) != buf.size())
        throw IoError("short write to checkpoint: " + path);
}

LoadedModel load_model(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::fseek(f.get(), 0, SEEK_END);
    const long len = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    std::string buf(static_cast<size_t>(len), '\0');
    if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
        throw IoError("short read from checkpoint: " + path);

    if (buf.size() < 24 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const uint64_t hlen = get_u64(p + 8);
    if (16 + hlen + 8 > buf.size()) throw IoError("truncated checkpoint header: " + path);
    json header = json::parse(buf.substr(16, hlen));
    if (header.at("format_version").get<int>() != kFormatVersion)
        throw IoError("unsupported checkpoint format version in " + path);

    const uint64_t count = get_u64(p + 16 + hlen);
    const size_t payload_off = 24 + hlen;
    if (payload_off + count * 8 > buf.size()) throw IoError("truncated checkpoint payload: " + path);

    LoadedModel out;
    Model& m = out.model;
    m.in_ch = header.at("input")[0].get<int>();
    m.in_h = header.at("input")[1].get<int>();
    m.in_w = header.at("input")[2].get<int>();
    m.classes = header.at("classes").get<int>();
    m.canonized = header.at("canonized").get<bool>();
    for (const json& jl : header.at("layers")) m.layers.push_back(layer_from_json(jl));
    out.meta_json = header.at("meta").dump();

    size_t off = payload_off;
    auto read_f64 = [&](double* dst, size_t n) {
        for (size_t i = 0; i < n; ++i, off += 8)
            dst[i] = std::bit_cast<double>(get_u64(reinterpret_cast<const unsigned char*>(buf.data()) + off));
    };
    size_t expected = 0;
    for (Layer& l : m.layers) {
        if (auto* c = std::get_if<Conv2d>(&l)) expected += c->w.size() + c->b.size();
        else if (auto* d = std::get_if<Dense>(&l)) expected += d->w.size() + d->b.size();
        else if (auto* b = std::get_if<BatchNorm>(&l)) expected += 4 * b->gamma.size();
    }
    if (expected != count)
        throw IoError("checkpoint parameter count mismatch in " + path + ": header implies " +
                      std::to_string(expected) + ", file has " + std::to_string(count));
    for (Layer& l : m.layers) {
        if (auto* c = std::get_if<Conv2d>(&l)) {
            read_f64(c->w.data(), c->w.size());
            read_f64(c->b.data(), c->b.size());
        } else if (auto* d = std::get_if<Dense>(&l)) {
            read_f64(d->w.data(), d->w.size());
            read_f64(d->b.data(), d->b.size());
        } else if (auto* b = std::get_if<BatchNorm>(&l)) {
            read_f64(b->gamma.data(), b->gamma.size());
            read_f64(b->beta.data(), b->beta.size());
            read_f64(b->running_mean.data(), b->running_mean.size());
            read_f64(b->running_var.data(), b->running_var.size());
        }
    }
    return out;
}

}  // namespace heatrank
