// Command-line front end: generate -> train -> explain -> evaluate ->
// rank -> render, each stage idempotent given the seed and guarded by a
// stage manifest recording input/output hashes and the config hash.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "heatrank/checkpoint.hpp"
#include "heatrank/dataset.hpp"
#include "heatrank/evaluate.hpp"
#include "heatrank/explain.hpp"
#include "heatrank/io/hash.hpp"
#include "heatrank/io/png.hpp"
#include "heatrank/io/tensor_file.hpp"
#include "heatrank/ranking.hpp"
#include "heatrank/rng.hpp"
#include "heatrank/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using heatrank::Error;
using heatrank::InvalidArgument;
using heatrank::IoError;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------- config

json default_config() {
    json c;
    c["seed"] = 17;
    c["out"] = "run";
    c["dataset"] = {{"root", ""},      {"train", 200},        {"val", 60},
                    {"test", 60},      {"kind", "discolor"},  {"severity_lo", 0.4},
                    {"severity_hi", 1.0}, {"negative_fraction", 0.25}, {"h", 64},
                    {"w", 64}};
    c["train"] = {{"epochs", 30},  {"batch_size", 32},          {"lr", 0.05},
                  {"lr_decay", 0.92}, {"momentum", 0.9},         {"weight_decay", 0.0},
                  {"early_stop_val_acc", 0.995}, {"keep_best", true}, {"checkpoint", ""}};
    c["explain"] = {{"images", 4}};
    c["evaluate"] = {{"methods", json::array({"gradients", "input-x-gradients"})},
                     {"poolings", json::array({"mean", "max", "max-abs", "l2"})},
                     {"metrics", json::array({"pixel-flipping", "irof", "sensitivity",
                                              "complexity", "roc-auc",
                                              "relevance-mass-accuracy"})},
                     {"robustness_augs", json::array()},
                     {"robustness_methods", json::array()},
                     {"sensitivity_methods", json::array()},
                     {"max_images", 8},
                     {"robustness_images", 4},
                     {"ig_steps", 64},
                     {"lime_samples", 1000},
                     {"shap_samples", 1000},
                     {"sensitivity_samples", 8},
                     {"sensitivity_radius", 0.05},
                     {"flip_fraction", 0.2},
                     {"target_drop", 0.1},
                     {"grid_points", 11},
                     {"workers", 1},
                     {"min_foreground_segments", 4}};
    c["rank"] = {{"monte_carlo_n", 100}};
    return c;
}

const std::vector<std::string> kCheapMethods = {
    "gradients",        "input-x-gradients",      "integrated-gradients",
    "deconvolution",    "guided-backprop",        "guided-gradcam",
    "lrp-epsilon-plus-flat", "lrp-epsilon-gamma-box", "lrp-epsilon-alpha2beta1-flat"};

void apply_preset(json& c, const std::string& preset) {
    if (preset == "desk") {
        c["dataset"]["train"] = 2000;
        c["dataset"]["val"] = 400;
        c["dataset"]["test"] = 400;
        c["train"]["epochs"] = 30;
        auto& e = c["evaluate"];
        e["methods"] = json(heatrank::all_method_ids());
        e["robustness_augs"] =
            json::array({"brightness", "hue", "saturation", "rotate", "scale", "translate"});
        e["robustness_methods"] = json(kCheapMethods);
        e["sensitivity_methods"] = json(kCheapMethods);
        e["max_images"] = 24;
        e["robustness_images"] = 12;
        e["ig_steps"] = 16;
        e["sensitivity_samples"] = 8;
        c["rank"]["monte_carlo_n"] = 100;
    } else if (preset == "full") {
        c["dataset"]["train"] = 4000;
        c["dataset"]["val"] = 800;
        c["dataset"]["test"] = 800;
        c["train"]["epochs"] = 60;
        auto& e = c["evaluate"];
        e["methods"] = json(heatrank::all_method_ids());
        e["robustness_augs"] =
            json::array({"brightness", "hue", "saturation", "rotate", "scale", "translate"});
        std::vector<std::string> rob = kCheapMethods;
        rob.push_back("occlusion");
        e["robustness_methods"] = json(rob);
        e["sensitivity_methods"] = json(kCheapMethods);
        // Occlusion gets the color augmentations only; re-explaining every
        // geometric grid point is outside any sane budget.
        e["robustness_skip"] = json::array();
        for (const char* kind : {"rotate", "scale", "translate", "saturation"})
            e["robustness_skip"].push_back({{"method", "occlusion"}, {"aug", kind}});
        e["max_images"] = 100;
        e["robustness_images"] = 50;
        e["ig_steps"] = 64;
        e["sensitivity_samples"] = 50;
        c["rank"]["monte_carlo_n"] = 1000;
    } else {
        throw InvalidArgument("unknown preset: " + preset);
    }
}

void deep_merge(json& base, const json& patch) {
    if (!patch.is_object() || !base.is_object()) {
        base = patch;
        return;
    }
    for (const auto& [key, value] : patch.items()) {
        if (base.contains(key) && base[key].is_object() && value.is_object())
            deep_merge(base[key], value);
        else
            base[key] = value;
    }
}

// Spread across machines or re-pointed at another directory, the same
// configuration must mean the same run: location and worker count stay
// out of the hash.
std::string config_hash_of(json c) {
    c.erase("out");
    if (c.contains("evaluate")) c["evaluate"].erase("workers");
    return heatrank::hash_string(c.dump());
}

struct Ctx {
    json cfg;
    std::string out;
    bool force = false;
    std::string hash;

    std::string dataset_root() const {
        const std::string root = cfg["dataset"]["root"].get<std::string>();
        return root.empty() ? out + "/dataset" : root;
    }
    std::string checkpoint() const {
        const std::string p = cfg["train"]["checkpoint"].get<std::string>();
        return p.empty() ? out + "/model.ckpt" : p;
    }
    std::string path(const std::string& name) const { return out + "/" + name; }
};

// ------------------------------------------------------------- small io

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
}

// -------------------------------------------------------- stage manifest

void write_stage_manifest(const Ctx& ctx, const std::string& stage,
                          const std::vector<std::string>& inputs,
                          const std::vector<std::string>& outputs) {
    json m;
    m["stage"] = stage;
    m["config_hash"] = ctx.hash;
    m["inputs"] = json::object();
    for (const std::string& p : inputs) m["inputs"][p] = heatrank::hash_file(p);
    m["outputs"] = json::object();
    for (const std::string& p : outputs) m["outputs"][p] = heatrank::hash_file(p);
    write_file(ctx.path("stage_" + stage + ".json"), m.dump(2) + "\n");
}

// Consuming a file produced by an earlier stage: the file must match the
// hash that stage recorded, and that stage must have run under the same
// configuration. --force downgrades a mismatch to a warning.
void check_upstream(const Ctx& ctx, const std::string& producer,
                    const std::vector<std::string>& files) {
    const std::string mpath = ctx.path("stage_" + producer + ".json");
    std::string complaint;
    if (!fs::exists(mpath)) {
        complaint = "no manifest for stage '" + producer + "'; run `heatrank " + producer +
                    "` first";
    } else {
        const json m = json::parse(read_file(mpath));
        if (m.value("config_hash", "") != ctx.hash)
            complaint = "stage '" + producer +
                        "' ran under a different configuration; re-run it";
        else
            for (const std::string& f : files) {
                if (!m["outputs"].contains(f)) {
                    complaint = f + " is not an output of stage '" + producer + "'";
                    break;
                }
                if (!fs::exists(f)) {
                    complaint = f + " is missing; re-run `heatrank " + producer + "`";
                    break;
                }
                if (heatrank::hash_file(f) != m["outputs"][f].get<std::string>()) {
                    complaint = f + " changed since stage '" + producer +
                                "' wrote it; re-run `heatrank " + producer + "`";
                    break;
                }
            }
    }
    if (complaint.empty()) return;
    if (ctx.force) {
        std::cerr << "warning: " << complaint << " (continuing under --force)\n";
        return;
    }
    throw Error("stale upstream artifact: " + complaint + ", or pass --force");
}

// ----------------------------------------------------------- formatting

std::string num(double v, const char* fmt = "%.3f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

std::string metric_table_md(const std::vector<heatrank::MetricScore>& scores,
                            const std::string& metric, const std::vector<std::string>& methods,
                            const std::vector<std::string>& poolings) {
    std::map<std::pair<std::string, std::string>, const heatrank::MetricScore*> cell;
    heatrank::Direction dir = heatrank::Direction::higher_better;
    int n_max = 0;
    bool any = false;
    for (const heatrank::MetricScore& s : scores) {
        if (s.metric != metric) continue;
        cell[{s.method, s.pooling}] = &s;
        dir = s.direction;
        n_max = std::max(n_max, s.n);
        any = true;
    }
    if (!any) return "";
    std::string md = "## " + metric + " (" + to_string(dir) + ", n = " + std::to_string(n_max) +
                     " images)\n\n| method |";
    for (const std::string& p : poolings) md += " " + p + " |";
    md += "\n|---|";
    for (size_t i = 0; i < poolings.size(); ++i) md += "---|";
    md += "\n";
    // Every configured method keeps its row; skipped combinations show "-"
    // like the reference tables.
    for (const std::string& m : methods) {
        md += "| " + m + " |";
        for (const std::string& p : poolings) {
            const auto it = cell.find({m, p});
            if (it == cell.end())
                md += " - |";
            else
                md += " " + num(it->second->mean) + " ± " + num(it->second->sem) + " |";
        }
        md += "\n";
    }
    return md + "\n";
}

std::string ranking_csv(const heatrank::RankingResult& r) {
    std::string out = "position,method,mrr,uncertainty\n";
    for (size_t i = 0; i < r.order.size(); ++i)
        out += std::to_string(i + 1) + "," + r.order[i].method + "," +
               num(r.order[i].mrr, "%.12g") + "," + num(r.order[i].uncertainty, "%.12g") + "\n";
    return out;
}

json ranking_json(const heatrank::RankingResult& r, const Ctx& ctx) {
    json out;
    out["config_hash"] = ctx.hash;
    out["mode"] = r.mode;
    out["order"] = json::array();
    for (size_t i = 0; i < r.order.size(); ++i)
        out["order"].push_back({{"position", i + 1},
                                {"method", r.order[i].method},
                                {"mrr", r.order[i].mrr},
                                {"uncertainty", r.order[i].uncertainty}});
    return out;
}

std::string ranking_md(const heatrank::RankingResult& means, const heatrank::RankingResult& mc,
                       int mc_n) {
    std::string md = "# Method ranking\n\n## Means only\n\n| position | method | MRR |\n|---|---|---|\n";
    for (size_t i = 0; i < means.order.size(); ++i)
        md += "| " + std::to_string(i + 1) + " | " + means.order[i].method + " | " +
              num(means.order[i].mrr) + " |\n";
    md += "\n## Monte Carlo (n = " + std::to_string(mc_n) +
          ")\n\n| position | method | MRR |\n|---|---|---|\n";
    for (size_t i = 0; i < mc.order.size(); ++i)
        md += "| " + std::to_string(i + 1) + " | " + mc.order[i].method + " | " +
              num(mc.order[i].mrr) + " ± " + num(mc.order[i].uncertainty) + " |\n";
    return md;
}

// --------------------------------------------------------------- stages

void run_generate(const Ctx& ctx) {
    const json& d = ctx.cfg["dataset"];
    heatrank::DatasetConfig dc;
    dc.root = ctx.dataset_root();
    dc.train_count = d["train"].get<int>();
    dc.val_count = d["val"].get<int>();
    dc.test_count = d["test"].get<int>();
    dc.kind = heatrank::defect_kind_from_string(d["kind"].get<std::string>());
    dc.severity_lo = d["severity_lo"].get<double>();
    dc.severity_hi = d["severity_hi"].get<double>();
    dc.negative_fraction = d["negative_fraction"].get<double>();
    dc.h = d["h"].get<int>();
    dc.w = d["w"].get<int>();
    dc.seed = heatrank::seed_mix(ctx.cfg["seed"].get<uint64_t>(), "dataset");
    dc.config_hash = ctx.hash;
    heatrank::build_dataset(dc);
    write_stage_manifest(ctx, "generate", {}, {dc.root + "/manifest.json"});
    std::cout << "dataset written to " << dc.root << "\n";
}

void run_train(const Ctx& ctx) {
    const std::string manifest = ctx.dataset_root() + "/manifest.json";
    check_upstream(ctx, "generate", {manifest});
    const heatrank::DatasetManifest dm = heatrank::load_manifest(manifest);
    const heatrank::SampleSet train_set = heatrank::load_split(dm, "train");
    const heatrank::SampleSet val_set = heatrank::load_split(dm, "val");
    const heatrank::SampleSet test_set = heatrank::load_split(dm, "test");

    const json& t = ctx.cfg["train"];
    const uint64_t seed = ctx.cfg["seed"].get<uint64_t>();
    heatrank::Model m = heatrank::make_micro_cnn(heatrank::seed_mix(seed, "model-init"), 3,
                                                 train_set.h, train_set.w, 2);
    heatrank::TrainConfig tc;
    tc.epochs = t["epochs"].get<int>();
    tc.batch_size = t["batch_size"].get<int>();
    tc.lr = t["lr"].get<double>();
    tc.lr_decay = t["lr_decay"].get<double>();
    tc.momentum = t["momentum"].get<double>();
    tc.weight_decay = t["weight_decay"].get<double>();
    tc.early_stop_val_acc = t["early_stop_val_acc"].get<double>();
    tc.keep_best = t["keep_best"].get<bool>();
    tc.seed = heatrank::seed_mix(seed, "train");
    const heatrank::TrainReport report = heatrank::train(m, train_set, val_set, tc);
    const double test_acc = heatrank::accuracy(m, test_set);

    json meta;
    meta["config_hash"] = ctx.hash;
    meta["val_acc"] = report.val_acc;
    meta["test_acc"] = test_acc;
    heatrank::save_model(ctx.checkpoint(), m, meta.dump());

    json rj;
    rj["config_hash"] = ctx.hash;
    rj["epochs_run"] = report.epochs_run;
    rj["best_epoch"] = report.best_epoch;
    rj["final_train_loss"] = report.final_train_loss;
    rj["train_acc"] = report.train_acc;
    rj["val_acc"] = report.val_acc;
    rj["test_acc"] = test_acc;
    write_file(ctx.path("train_report.json"), rj.dump(2) + "\n");
    write_stage_manifest(ctx, "train", {manifest},
                         {ctx.checkpoint(), ctx.path("train_report.json")});
    std::cout << "checkpoint " << ctx.checkpoint() << " val_acc " << num(report.val_acc)
              << " test_acc " << num(test_acc) << "\n";
}

heatrank::EvalConfig eval_config_of(const Ctx& ctx) {
    const json& e = ctx.cfg["evaluate"];
    heatrank::EvalConfig ec;
    ec.methods = e["methods"].get<std::vector<std::string>>();
    ec.poolings.clear();
    for (const auto& p : e["poolings"])
        ec.poolings.push_back(heatrank::pooling_from_string(p.get<std::string>()));
    ec.metrics = e["metrics"].get<std::vector<std::string>>();
    ec.robustness_augs.clear();
    for (const auto& a : e["robustness_augs"])
        ec.robustness_augs.push_back(heatrank::aug_kind_from_string(a.get<std::string>()));
    ec.robustness_methods = e["robustness_methods"].get<std::vector<std::string>>();
    ec.sensitivity_methods = e["sensitivity_methods"].get<std::vector<std::string>>();
    if (e.contains("robustness_skip"))
        for (const auto& s : e["robustness_skip"])
            ec.robustness_skip.push_back(
                {s["method"].get<std::string>(),
                 heatrank::aug_kind_from_string(s["aug"].get<std::string>())});
    ec.max_images = e["max_images"].get<int>();
    ec.robustness_images = e["robustness_images"].get<int>();
    ec.ig_steps = e["ig_steps"].get<int>();
    ec.lime_samples = e["lime_samples"].get<int>();
    ec.shap_samples = e["shap_samples"].get<int>();
    ec.sensitivity_samples = e["sensitivity_samples"].get<int>();
    ec.sensitivity_radius = e["sensitivity_radius"].get<double>();
    ec.flip_fraction = e["flip_fraction"].get<double>();
    ec.robustness_target_drop = e["target_drop"].get<double>();
    ec.grid_points = e["grid_points"].get<int>();
    ec.workers = e["workers"].get<int>();
    ec.seed = ctx.cfg["seed"].get<uint64_t>();
    ec.segmentation.min_foreground_segments = e["min_foreground_segments"].get<int>();
    return ec;
}

void run_evaluate(const Ctx& ctx) {
    const std::string manifest = ctx.dataset_root() + "/manifest.json";
    check_upstream(ctx, "generate", {manifest});
    check_upstream(ctx, "train", {ctx.checkpoint()});
    const heatrank::DatasetManifest dm = heatrank::load_manifest(manifest);
    const heatrank::SampleSet test_set = heatrank::load_split(dm, "test");
    const heatrank::Model model = heatrank::load_model(ctx.checkpoint()).model;
    const heatrank::EvalConfig ec = eval_config_of(ctx);

    const heatrank::EvalResult r = heatrank::evaluate(model, test_set, ec);

    std::string csv = heatrank::scores_csv(r.scores);
    csv += "# config_hash=" + ctx.hash + "\n";
    write_file(ctx.path("metrics.csv"), csv);

    json mj;
    mj["config_hash"] = ctx.hash;
    mj["scores"] = json::array();
    for (const heatrank::MetricScore& s : r.scores)
        mj["scores"].push_back({{"metric", s.metric},
                                {"method", s.method},
                                {"pooling", s.pooling},
                                {"mean", s.mean},
                                {"sem", s.sem},
                                {"n", s.n},
                                {"direction", to_string(s.direction)}});
    mj["images"] = r.images;
    mj["skipped"] = json::array();
    for (const heatrank::SkipRecord& s : r.skipped)
        mj["skipped"].push_back({{"id", s.id}, {"what", s.what}, {"reason", s.reason}});
    mj["calibration"] = json::array();
    for (const heatrank::CalibrationRow& c : r.calibration)
        mj["calibration"].push_back({{"aug", to_string(c.kind)},
                                     {"half_width", c.half_width},
                                     {"hit_domain_bound", c.hit_domain_bound},
                                     {"achieved_drop", c.achieved_drop}});
    write_file(ctx.path("metrics.json"), mj.dump(2) + "\n");

    // Group assignment and the expected column set for the rank stage.
    json gj;
    gj["config_hash"] = ctx.hash;
    gj["groups"] = json::object();
    gj["expected_columns"] = json::array();
    std::set<std::pair<std::string, std::string>> columns;
    for (const heatrank::MetricScore& s : r.scores) {
        gj["groups"][s.metric] = to_string(heatrank::metric_group(s.metric));
        if (columns.insert({s.metric, s.pooling}).second)
            gj["expected_columns"].push_back({{"metric", s.metric}, {"pooling", s.pooling}});
    }
    write_file(ctx.path("groups.json"), gj.dump(2) + "\n");

    // Markdown tables, one per metric, "-" where a cell was skipped.
    std::vector<std::string> metric_order = ec.metrics;
    for (heatrank::AugKind kind : ec.robustness_augs)
        metric_order.push_back("robustness/" + to_string(kind));
    std::vector<std::string> pooling_names;
    for (heatrank::Pooling p : ec.poolings) pooling_names.push_back(to_string(p));
    std::string md = "# Metric tables\n\n";
    for (const std::string& metric : metric_order) {
        const bool robustness = metric.rfind("robustness/", 0) == 0;
        md += metric_table_md(r.scores, metric, ec.methods,
                              robustness ? std::vector<std::string>{"mean"} : pooling_names);
    }
    md += "config hash: " + ctx.hash + "\n";
    write_file(ctx.path("tables.md"), md);

    write_stage_manifest(ctx, "evaluate", {manifest, ctx.checkpoint()},
                         {ctx.path("metrics.csv"), ctx.path("metrics.json"),
                          ctx.path("groups.json"), ctx.path("tables.md")});
    std::cout << "evaluated " << r.images.size() << " images, " << r.scores.size()
              << " score rows, " << r.skipped.size() << " skips\n";
}

void run_rank(const Ctx& ctx) {
    check_upstream(ctx, "evaluate", {ctx.path("metrics.csv"), ctx.path("groups.json")});
    const std::vector<heatrank::MetricScore> scores =
        heatrank::parse_scores_csv(read_file(ctx.path("metrics.csv")));
    const json gj = json::parse(read_file(ctx.path("groups.json")));

    std::map<std::string, heatrank::MetricGroup> groups;
    for (const auto& [metric, name] : gj["groups"].items()) {
        const std::string g = name.get<std::string>();
        if (g == "aug-robustness")
            groups[metric] = heatrank::MetricGroup::aug_robustness;
        else if (g == "quality-no-gt")
            groups[metric] = heatrank::MetricGroup::quality_no_gt;
        else if (g == "ground-truth")
            groups[metric] = heatrank::MetricGroup::ground_truth;
        else
            throw InvalidArgument("unknown group '" + g + "' for metric " + metric);
    }
    std::set<std::pair<std::string, std::string>> have;
    for (const heatrank::MetricScore& s : scores) have.insert({s.metric, s.pooling});
    for (const auto& col : gj["expected_columns"]) {
        const std::pair<std::string, std::string> key = {col["metric"].get<std::string>(),
                                                         col["pooling"].get<std::string>()};
        if (have.count(key) == 0)
            throw InvalidArgument("metric column " + key.first + "/" + key.second +
                                  " has no measurements in metrics.csv");
    }

    heatrank::MetricTable table = heatrank::make_table(scores, &groups);
    heatrank::impute_table(table);
    const uint64_t seed = ctx.cfg["seed"].get<uint64_t>();
    const int mc_n = ctx.cfg["rank"]["monte_carlo_n"].get<int>();
    const heatrank::RankingResult means = heatrank::rank_once(table, seed);
    const heatrank::RankingResult mc = heatrank::rank_monte_carlo(table, mc_n, seed);

    write_file(ctx.path("ranking_means.csv"),
               ranking_csv(means) + "# config_hash=" + ctx.hash + "\n");
    write_file(ctx.path("ranking_mc.csv"), ranking_csv(mc) + "# config_hash=" + ctx.hash + "\n");
    json mjs = ranking_json(means, ctx);
    write_file(ctx.path("ranking_means.json"), mjs.dump(2) + "\n");
    json mcj = ranking_json(mc, ctx);
    mcj["monte_carlo_n"] = mc_n;
    write_file(ctx.path("ranking_mc.json"), mcj.dump(2) + "\n");
    write_file(ctx.path("ranking.md"),
               ranking_md(means, mc, mc_n) + "\nconfig hash: " + ctx.hash + "\n");
    write_stage_manifest(ctx, "rank", {ctx.path("metrics.csv"), ctx.path("groups.json")},
                         {ctx.path("ranking_means.csv"), ctx.path("ranking_mc.csv"),
                          ctx.path("ranking_means.json"), ctx.path("ranking_mc.json"),
                          ctx.path("ranking.md")});
    std::cout << "ranked " << means.order.size() << " methods; top method (means only): "
              << (means.order.empty() ? "none" : means.order[0].method) << "\n";
}

// First `count` correctly classified test images, in split order.
std::vector<const heatrank::Sample*> pick_correct(const heatrank::Model& m,
                                                  const heatrank::SampleSet& set, int count) {
    std::vector<const heatrank::Sample*> out;
    for (const heatrank::Sample& s : set.items) {
        if (static_cast<int>(out.size()) >= count) break;
        const std::vector<double> probs = heatrank::predict_probs(m, s.tensor(set.h, set.w));
        const int pred = static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                          probs.begin());
        if (pred == s.label) out.push_back(&s);
    }
    if (out.empty()) throw InvalidArgument("no correctly classified test images");
    return out;
}

void run_explain(const Ctx& ctx) {
    const std::string manifest = ctx.dataset_root() + "/manifest.json";
    check_upstream(ctx, "generate", {manifest});
    check_upstream(ctx, "train", {ctx.checkpoint()});
    const heatrank::DatasetManifest dm = heatrank::load_manifest(manifest);
    const heatrank::SampleSet test_set = heatrank::load_split(dm, "test");
    const heatrank::Model model = heatrank::load_model(ctx.checkpoint()).model;
    const heatrank::EvalConfig ec = eval_config_of(ctx);
    const int count = ctx.cfg["explain"]["images"].get<int>();

    std::vector<std::string> base;
    bool want_aggregate = false;
    for (const std::string& id : ec.methods)
        if (id == "mean-aggregate")
            want_aggregate = true;
        else
            base.push_back(id);
    heatrank::Model flat;
    bool have_flat = false;
    for (const std::string& id : base)
        if (heatrank::method_is_lrp(id)) {
            flat = heatrank::merge_batchnorm(model);
            have_flat = true;
            break;
        }

    const std::vector<const heatrank::Sample*> picked = pick_correct(model, test_set, count);
    json index;
    index["config_hash"] = ctx.hash;
    index["h"] = test_set.h;
    index["w"] = test_set.w;
    index["entries"] = json::array();
    std::vector<std::string> outputs;
    for (size_t i = 0; i < picked.size(); ++i) {
        const heatrank::Sample& s = *picked[i];
        const heatrank::Tensor x = s.tensor(test_set.h, test_set.w);
        const uint64_t iseed = heatrank::seed_mix(ec.seed, "explain-image", i);
        heatrank::SegmentMap segments;
        bool have_segments = false;
        std::map<std::string, heatrank::Heatmap> maps;
        for (const std::string& id : base) {
            heatrank::MethodSpec spec = heatrank::method_spec(id);
            spec.ig_steps = ec.ig_steps;
            spec.lime_samples = ec.lime_samples;
            spec.shap_samples = ec.shap_samples;
            if (heatrank::method_needs_segments(id) && !have_segments) {
                segments = heatrank::quickshift(x, s.fg, ec.segmentation);
                have_segments = true;
            }
            maps.emplace(id, heatrank::explain(
                                 spec, heatrank::method_is_lrp(id) && have_flat ? flat : model, x,
                                 s.fg, s.label,
                                 heatrank::method_needs_segments(id) ? &segments : nullptr,
                                 heatrank::seed_mix(iseed, id)));
        }
        size_t pi = 0;
        for (heatrank::Pooling p : ec.poolings) {
            std::vector<heatrank::PooledMap> pooled;
            for (const std::string& id : base) {
                pooled.push_back(heatrank::pool_channels(maps.at(id), p));
                const std::string file =
                    ctx.path("heatmaps/" + s.id + "/" + id + "." + to_string(p) + ".f32");
                json meta = {{"image", s.id},          {"method", id},
                             {"pooling", to_string(p)}, {"signed", pooled.back().signed_values},
                             {"config_hash", ctx.hash}, {"target", s.label}};
                fs::create_directories(fs::path(file).parent_path());
                heatrank::Tensor t({test_set.h, test_set.w});
                for (size_t k = 0; k < pooled.back().v.size(); ++k) t[k] = pooled.back().v[k];
                heatrank::tio::save_f32(file, t, meta.dump());
                index["entries"].push_back({{"image", s.id},
                                            {"method", id},
                                            {"pooling", to_string(p)},
                                            {"signed", pooled.back().signed_values},
                                            {"file", file}});
            }
            if (want_aggregate) {
                const heatrank::PooledMap agg =
                    heatrank::aggregate_maps(pooled, heatrank::seed_mix(iseed, "aggregate", pi));
                const std::string file = ctx.path("heatmaps/" + s.id + "/mean-aggregate." +
                                                  to_string(p) + ".f32");
                json meta = {{"image", s.id},          {"method", "mean-aggregate"},
                             {"pooling", to_string(p)}, {"signed", agg.signed_values},
                             {"config_hash", ctx.hash}, {"target", s.label}};
                fs::create_directories(fs::path(file).parent_path());
                heatrank::Tensor t({test_set.h, test_set.w});
                for (size_t k = 0; k < agg.v.size(); ++k) t[k] = agg.v[k];
                heatrank::tio::save_f32(file, t, meta.dump());
                index["entries"].push_back({{"image", s.id},
                                            {"method", "mean-aggregate"},
                                            {"pooling", to_string(p)},
                                            {"signed", agg.signed_values},
                                            {"file", file}});
            }
            ++pi;
        }
    }
    write_file(ctx.path("heatmaps/index.json"), index.dump(2) + "\n");
    write_stage_manifest(ctx, "explain", {manifest, ctx.checkpoint()},
                         {ctx.path("heatmaps/index.json")});
    std::cout << "explained " << picked.size() << " images, " << index["entries"].size()
              << " heatmap planes\n";
}

void run_render(const Ctx& ctx) {
    check_upstream(ctx, "explain", {ctx.path("heatmaps/index.json")});
    const json index = json::parse(read_file(ctx.path("heatmaps/index.json")));
    const int h = index["h"].get<int>();
    const int w = index["w"].get<int>();

    // Foreground masks come from the dataset images themselves.
    const heatrank::DatasetManifest dm =
        heatrank::load_manifest(ctx.dataset_root() + "/manifest.json");
    const heatrank::SampleSet test_set = heatrank::load_split(dm, "test");
    std::map<std::string, const heatrank::Sample*> by_id;
    for (const heatrank::Sample& s : test_set.items) by_id[s.id] = &s;

    int rendered = 0;
    for (const auto& entry : index["entries"]) {
        const std::string id = entry["image"].get<std::string>();
        const auto sit = by_id.find(id);
        if (sit == by_id.end()) throw InvalidArgument("heatmap index names unknown image " + id);
        const heatrank::tio::LoadedTensor lt = heatrank::tio::load(entry["file"].get<std::string>());
        heatrank::PooledMap map;
        map.h = h;
        map.w = w;
        map.v.assign(lt.t.data(), lt.t.data() + lt.t.size());
        map.signed_values = entry["signed"].get<bool>();
        map.fg = sit->second->fg;
        std::vector<heatrank::PooledMap> one = {map};
        heatrank::normalize_maps(one, heatrank::NormStat::percentile99,
                                 heatrank::NormScope::per_image);
        const std::vector<uint8_t> rgb = heatrank::render_rgb(one[0]);
        const std::string file = ctx.path("renders/" + id + "/" +
                                          entry["method"].get<std::string>() + "." +
                                          entry["pooling"].get<std::string>() + ".png");
        fs::create_directories(fs::path(file).parent_path());
        heatrank::pngio::write_rgb(file, w, h, rgb, {{"config_hash", ctx.hash}});
        ++rendered;
    }
    // Side-by-side reference: the input image of every rendered id.
    std::set<std::string> ids;
    for (const auto& entry : index["entries"]) ids.insert(entry["image"].get<std::string>());
    for (const std::string& id : ids) {
        const heatrank::Sample& s = *by_id.at(id);
        std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
        const size_t plane = static_cast<size_t>(h) * w;
        for (size_t i = 0; i < plane; ++i)
            for (int c = 0; c < 3; ++c)
                rgb[i * 3 + static_cast<size_t>(c)] = static_cast<uint8_t>(
                    std::lround(255.0 * std::min(1.0f, std::max(0.0f, s.image[c * plane + i]))));
        const std::string file = ctx.path("renders/" + id + "/input.png");
        fs::create_directories(fs::path(file).parent_path());
        heatrank::pngio::write_rgb(file, w, h, rgb, {{"config_hash", ctx.hash}});
    }
    json rindex;
    rindex["config_hash"] = ctx.hash;
    rindex["rendered"] = rendered;
    write_file(ctx.path("renders/index.json"), rindex.dump(2) + "\n");
    write_stage_manifest(ctx, "render", {ctx.path("heatmaps/index.json")},
                         {ctx.path("renders/index.json")});
    std::cout << "rendered " << rendered << " heatmaps under " << ctx.path("renders") << "\n";
}

void run_pipeline(const Ctx& ctx) {
    run_generate(ctx);
    run_train(ctx);
    run_explain(ctx);
    run_evaluate(ctx);
    run_rank(ctx);
    run_render(ctx);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Attribution-method evaluation workbench for grain-defect classifiers"};
    app.require_subcommand(1);

    std::string config_path, preset, out_override, methods_csv, poolings_csv, metrics_csv;
    int64_t seed_override = -1;
    int workers_override = 0;
    bool force = false;
    app.add_option("--config", config_path, "JSON config file overlaid on the defaults");
    app.add_option("--preset", preset, "desk or full")
        ->check(CLI::IsMember({"desk", "full"}));
    app.add_option("--seed", seed_override, "master seed threaded into every stage");
    app.add_option("--workers", workers_override, "worker threads for evaluate");
    app.add_option("--methods", methods_csv, "comma-separated method ids");
    app.add_option("--poolings", poolings_csv, "comma-separated poolings");
    app.add_option("--metrics", metrics_csv, "comma-separated metric ids");
    app.add_option("--out", out_override, "output directory (default run)");
    app.add_flag("--force", force, "ignore stale upstream artifacts");

    const std::vector<std::tuple<std::string, const char*, void (*)(const Ctx&)>> stages = {
        {"generate", "synthesize the grain-kernel dataset", run_generate},
        {"train", "train the classifier and write the checkpoint", run_train},
        {"explain", "write pooled heatmap planes for sample images", run_explain},
        {"evaluate", "score methods on every metric, write CSV/JSON/tables", run_evaluate},
        {"rank", "aggregate metric scores into the two final rankings", run_rank},
        {"render", "render stored heatmap planes to PNG", run_render},
        {"pipeline", "run every stage in order", run_pipeline}};
    for (const auto& [name, blurb, fn] : stages) {
        CLI::App* sub = app.add_subcommand(name, blurb);
        sub->fallthrough();
        (void)fn;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        json err = {{"error", {{"type", "cli-parse"}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    }

    try {
        json cfg = default_config();
        if (!preset.empty()) apply_preset(cfg, preset);
        if (!config_path.empty()) deep_merge(cfg, json::parse(read_file(config_path)));
        if (seed_override >= 0) cfg["seed"] = static_cast<uint64_t>(seed_override);
        if (workers_override > 0) cfg["evaluate"]["workers"] = workers_override;
        if (!out_override.empty()) cfg["out"] = out_override;
        auto split_csv = [](const std::string& s) {
            std::vector<std::string> out;
            std::istringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) out.push_back(item);
            return out;
        };
        if (!methods_csv.empty()) cfg["evaluate"]["methods"] = json(split_csv(methods_csv));
        if (!poolings_csv.empty()) cfg["evaluate"]["poolings"] = json(split_csv(poolings_csv));
        if (!metrics_csv.empty()) cfg["evaluate"]["metrics"] = json(split_csv(metrics_csv));

        Ctx ctx;
        ctx.cfg = cfg;
        ctx.out = cfg["out"].get<std::string>();
        ctx.force = force;
        ctx.hash = config_hash_of(cfg);
        fs::create_directories(ctx.out);
        write_file(ctx.path("config.json"), cfg.dump(2) + "\n");

        for (const auto& [name, blurb, fn] : stages)
            if (app.got_subcommand(name)) fn(ctx);
        return 0;
    } catch (const std::exception& e) {
        const char* type = "internal";
        if (dynamic_cast<const InvalidArgument*>(&e))
            type = "invalid-argument";
        else if (dynamic_cast<const IoError*>(&e))
            type = "io-error";
        else if (dynamic_cast<const heatrank::TrainingError*>(&e))
            type = "training-error";
        else if (dynamic_cast<const heatrank::MetricUndefined*>(&e))
            type = "metric-undefined";
        else if (dynamic_cast<const Error*>(&e))
            type = "error";
        json err = {{"error", {{"type", type}, {"message", e.what()}}}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
}
