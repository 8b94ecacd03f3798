#include "heatrank/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "heatrank/error.hpp"
#include "heatrank/io/png.hpp"
#include "heatrank/io/tensor_file.hpp"
#include "heatrank/rng.hpp"

namespace heatrank {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kSchemaVersion = 1;

std::string item_id(const std::string& split, int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05d", split.c_str(), index);
    return buf;
}

json record_to_json(const ItemRecord& r) {
    return {{"id", r.id},           {"label", r.label}, {"severity", r.severity},
            {"has_negative", r.has_negative}, {"png", r.png},     {"sidecar", r.sidecar},
            {"mask", r.mask}};
}

ItemRecord record_from_json(const json& j) {
    ItemRecord r;
    r.id = j.at("id").get<std::string>();
    r.label = j.at("label").get<int>();
    r.severity = j.at("severity").get<double>();
    r.has_negative = j.at("has_negative").get<bool>();
    r.png = j.at("png").get<std::string>();
    r.sidecar = j.at("sidecar").get<std::string>();
    r.mask = j.at("mask").get<std::string>();
    return r;
}

}  // namespace

const std::vector<ItemRecord>& DatasetManifest::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw InvalidArgument("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<ItemRecord>& DatasetManifest::split(const std::string& name) {
    return const_cast<std::vector<ItemRecord>&>(std::as_const(*this).split(name));
}

Tensor Sample::tensor(int h, int w) const {
    Tensor t({3, h, w});
    if (image.size() != t.size()) throw InvalidArgument("sample image size mismatch for " + id);
    for (size_t i = 0; i < image.size(); ++i) t[i] = static_cast<double>(image[i]);
    return t;
}

uint8_t encode_annotation(int8_t v) { return v < 0 ? 0 : (v > 0 ? 255 : 128); }

int8_t decode_annotation(uint8_t v, const std::string& context) {
    if (v == 0) return -1;
    if (v == 128) return 0;
    if (v == 255) return 1;
    throw IoError("invalid annotation value " + std::to_string(v) + " in " + context);
}

DatasetManifest build_dataset(const DatasetConfig& cfg) {
    if (cfg.root.empty()) throw InvalidArgument("dataset root must not be empty");
    int n_train = cfg.train_count, n_val = cfg.val_count, n_test = cfg.test_count;
    if (n_train + n_val + n_test == 0) {
        if (cfg.total <= 0) throw InvalidArgument("dataset config needs split counts or a total");
        n_train = cfg.total * 6 / 10;
        n_val = cfg.total * 2 / 10;
        n_test = cfg.total - n_train - n_val;
    }
    if (n_train <= 0 || n_val < 0 || n_test < 0)
        throw InvalidArgument("dataset split counts must be positive");
    if (cfg.severity_lo <= 0.0 || cfg.severity_hi < cfg.severity_lo)
        throw InvalidArgument("severity range must satisfy 0 < lo <= hi");

    DatasetManifest m;
    m.schema_version = kSchemaVersion;
    m.root = cfg.root;
    m.defect_kind = to_string(cfg.kind);
    m.seed = cfg.seed;
    m.h = cfg.h;
    m.w = cfg.w;
    m.config_hash = cfg.config_hash;

    const std::pair<std::string, int> splits[] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
    for (const auto& [split, count] : splits) {
        fs::create_directories(fs::path(cfg.root) / split);
        // Balanced labels, defect taking the extra one, in seed-stable
        // shuffled order within the split.
        std::vector<int> labels(static_cast<size_t>(count), 0);
        const int defects = (count + 1) / 2;
        for (int i = 0; i < defects; ++i) labels[static_cast<size_t>(i)] = 1;
        Rng order_rng(seed_mix(cfg.seed, "order:" + split));
        order_rng.shuffle(labels);

        std::vector<ItemRecord>& records = m.split(split);
        for (int i = 0; i < count; ++i) {
            const uint64_t item_seed = seed_mix(cfg.seed, "item:" + split, static_cast<uint64_t>(i));
            Rng meta_rng(seed_mix(item_seed, "meta"));
            KernelParams kp;
            kp.kind = cfg.kind;
            kp.h = cfg.h;
            kp.w = cfg.w;
            if (labels[static_cast<size_t>(i)] == 1) {
                kp.severity = meta_rng.uniform(cfg.severity_lo, cfg.severity_hi);
                kp.negative_region = meta_rng.uniform() < cfg.negative_fraction;
            }
            SynthKernel k = generate_kernel(seed_mix(item_seed, "render"), kp);
            if (k.label != labels[static_cast<size_t>(i)])
                throw Error("generator produced label " + std::to_string(k.label) + " for requested " +
                            std::to_string(labels[static_cast<size_t>(i)]));

            ItemRecord r;
            r.id = item_id(split, i);
            r.label = k.label;
            r.severity = kp.severity;
            r.has_negative = kp.negative_region;
            r.png = split + "/" + r.id + ".png";
            r.sidecar = split + "/" + r.id + ".f32";
            r.mask = split + "/" + r.id + ".mask.png";

            const size_t plane = static_cast<size_t>(cfg.h) * cfg.w;
            std::vector<uint8_t> rgb(plane * 3);
            for (size_t p = 0; p < plane; ++p)
                for (int c = 0; c < 3; ++c)
                    rgb[p * 3 + static_cast<size_t>(c)] = static_cast<uint8_t>(
                        std::lround(255.0 * k.image[static_cast<size_t>(c) * plane + p]));
            pngio::TextChunks text{{"config_hash", cfg.config_hash}, {"item", r.id}};
            pngio::write_rgb((fs::path(cfg.root) / r.png).string(), cfg.w, cfg.h, rgb, text);

            Tensor t({3, cfg.h, cfg.w});
            for (size_t v = 0; v < k.image.size(); ++v) t[v] = k.image[v];
            json meta{{"item", r.id}, {"label", r.label}, {"severity", r.severity},
                      {"config_hash", cfg.config_hash}};
            tio::save_f32((fs::path(cfg.root) / r.sidecar).string(), t, meta.dump());

            std::vector<uint8_t> mask(plane);
            for (size_t p = 0; p < plane; ++p) mask[p] = encode_annotation(k.ann[p]);
            pngio::write_gray((fs::path(cfg.root) / r.mask).string(), cfg.w, cfg.h, mask, text);

            records.push_back(std::move(r));
        }
    }

    save_manifest(m, (fs::path(cfg.root) / "manifest.json").string());
    return m;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    json j;
    j["schema_version"] = m.schema_version;
    j["defect_kind"] = m.defect_kind;
    j["seed"] = m.seed;
    j["h"] = m.h;
    j["w"] = m.w;
    j["config_hash"] = m.config_hash;
    j["counts"] = {{"train", m.train.size()}, {"val", m.val.size()}, {"test", m.test.size()}};
    for (const auto* split : {&m.train, &m.val, &m.test}) {
        json arr = json::array();
        for (const ItemRecord& r : *split) arr.push_back(record_to_json(r));
        j["splits"][split == &m.train ? "train" : (split == &m.val ? "val" : "test")] = std::move(arr);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("manifest is not valid json: " + path + " (" + e.what() + ")");
    }
    DatasetManifest m;
    try {
        m.schema_version = j.at("schema_version").get<int>();
        if (m.schema_version != kSchemaVersion)
            throw IoError("unsupported manifest schema_version in " + path);
        m.defect_kind = j.at("defect_kind").get<std::string>();
        m.seed = j.at("seed").get<uint64_t>();
        m.h = j.at("h").get<int>();
        m.w = j.at("w").get<int>();
        m.config_hash = j.at("config_hash").get<std::string>();
        for (const json& r : j.at("splits").at("train")) m.train.push_back(record_from_json(r));
        for (const json& r : j.at("splits").at("val")) m.val.push_back(record_from_json(r));
        for (const json& r : j.at("splits").at("test")) m.test.push_back(record_from_json(r));
    } catch (const json::exception& e) {
        throw IoError("manifest missing required fields: " + path + " (" + e.what() + ")");
    }
    m.root = fs::path(path).parent_path().string();
    return m;
}

SampleSet load_split(const DatasetManifest& m, const std::string& split) {
    SampleSet set;
    set.h = m.h;
    set.w = m.w;
    const size_t plane = static_cast<size_t>(m.h) * m.w;
    for (const ItemRecord& r : m.split(split)) {
        Sample s;
        s.id = r.id;
        s.label = r.label;
        s.severity = r.severity;

        const std::string side = (fs::path(m.root) / r.sidecar).string();
        tio::LoadedTensor lt = tio::load(side);
        if (lt.t.shape() != std::vector<int>{3, m.h, m.w})
            throw IoError("sidecar tensor has shape " + lt.t.shape_str() + ", expected [3," +
                          std::to_string(m.h) + "," + std::to_string(m.w) + "]: " + side);
        s.image.resize(lt.t.size());
        for (size_t i = 0; i < lt.t.size(); ++i) s.image[i] = static_cast<float>(lt.t[i]);

        s.fg.assign(plane, 0);
        for (size_t p = 0; p < plane; ++p)
            s.fg[p] = (s.image[p] > 0 || s.image[plane + p] > 0 || s.image[2 * plane + p] > 0) ? 1 : 0;

        const std::string mask_path = (fs::path(m.root) / r.mask).string();
        pngio::Image8 mask = pngio::read(mask_path);
        if (mask.channels != 1 || mask.w != m.w || mask.h != m.h)
            throw IoError("annotation mask has unexpected geometry: " + mask_path);
        s.ann.resize(plane);
        for (size_t p = 0; p < plane; ++p) s.ann[p] = decode_annotation(mask.data[p], mask_path);

        set.items.push_back(std::move(s));
    }
    return set;
}

}  // namespace heatrank
