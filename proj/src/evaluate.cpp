#include "heatrank/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "heatrank/explain.hpp"
#include "heatrank/ranking.hpp"
#include "heatrank/rng.hpp"

namespace heatrank {

namespace {

using CellKey = std::tuple<std::string, std::string, std::string>;  // metric, method, pooling

struct ImageOutcome {
    std::map<CellKey, double> values;
    std::vector<SkipRecord> skipped;
};

std::vector<std::string> subset_or_all(const std::vector<std::string>& subset,
                                       const std::vector<std::string>& all,
                                       const char* what) {
    if (subset.empty()) return all;
    for (const std::string& id : subset)
        if (std::find(all.begin(), all.end(), id) == all.end())
            throw InvalidArgument(std::string(what) + " lists unknown method " + id);
    // Keep the configured method order.
    std::vector<std::string> out;
    for (const std::string& id : all)
        if (std::find(subset.begin(), subset.end(), id) != subset.end()) out.push_back(id);
    return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

const std::set<std::string>& known_metrics() {
    static const std::set<std::string> ids = {"pixel-flipping", "irof",    "sensitivity",
                                              "complexity",     "roc-auc", "relevance-mass-accuracy"};
    return ids;
}

Tensor plane_tensor(const PooledMap& map) {
    Tensor t({map.h, map.w});
    for (size_t i = 0; i < map.v.size(); ++i) t[i] = map.v[i];
    return t;
}

// Everything one evaluation run needs to score a single image; shared
// read-only across worker threads.
struct EvalPlan {
    const Model* model = nullptr;  // original network, drives predictions and metrics
    Model flat;                    // batch-norm merged, drives the relevance methods
    const EvalConfig* cfg = nullptr;
    std::vector<std::string> base_methods;  // cfg->methods without the aggregate
    bool want_aggregate = false;
    std::vector<std::string> sens_methods;
    std::vector<std::string> rob_methods;
    bool need_segments = false;
    std::vector<double> half_width;  // per cfg->robustness_augs entry

    const Model& model_for(const std::string& method) const {
        return method_is_lrp(method) ? flat : *model;
    }

    MethodSpec spec_for(const std::string& method) const {
        MethodSpec spec = method_spec(method);
        spec.ig_steps = cfg->ig_steps;
        spec.lime_samples = cfg->lime_samples;
        spec.shap_samples = cfg->shap_samples;
        return spec;
    }
};

// Explanations of the unperturbed and perturbed inputs are identical
// across the four pooling runs of one method (the perturbation stream is
// seeded per image), so they are computed once and replayed by call order.
struct SensitivityCache {
    std::vector<std::vector<Heatmap>> calls;  // one heatmap per base method involved
    size_t cursor = 0;
    void rewind() { cursor = 0; }
};

void score_image(const EvalPlan& plan, const Sample& sample, int image_index, int h, int w,
                 ImageOutcome& out) {
    const EvalConfig& cfg = *plan.cfg;
    const Model& m = *plan.model;
    const Tensor x = sample.tensor(h, w);
    const std::vector<uint8_t>& fg = sample.fg;
    const int target = sample.label;
    const uint64_t iseed = seed_mix(cfg.seed, "eval-image", static_cast<uint64_t>(image_index));

    SegmentMap segments;
    if (plan.need_segments) segments = quickshift(x, fg, cfg.segmentation);

    const bool scored_for_robustness =
        image_index < cfg.robustness_images && !cfg.robustness_augs.empty();

    // Ground-truth masks for the localization metrics.
    std::vector<uint8_t> positive_mask(sample.ann.size(), 0);
    bool any_positive = false;
    for (size_t i = 0; i < sample.ann.size(); ++i) {
        positive_mask[i] = sample.ann[i] > 0 ? 1 : 0;
        any_positive = any_positive || positive_mask[i];
    }

    // Base explanations and their pooled planes.
    std::map<std::string, Heatmap> base_maps;
    for (const std::string& method : plan.base_methods) {
        const MethodSpec spec = plan.spec_for(method);
        base_maps.emplace(method, explain(spec, plan.model_for(method), x, fg, target,
                                          method_needs_segments(method) ? &segments : nullptr,
                                          seed_mix(iseed, method.c_str())));
    }
    std::map<std::pair<std::string, Pooling>, PooledMap> pooled;
    for (const auto& [method, map] : base_maps)
        for (Pooling p : cfg.poolings) pooled.emplace(std::make_pair(method, p), pool_channels(map, p));
    if (plan.want_aggregate) {
        size_t pi = 0;
        for (Pooling p : cfg.poolings) {
            std::vector<PooledMap> parts;
            for (const std::string& method : plan.base_methods)
                parts.push_back(pooled.at({method, p}));
            pooled.emplace(std::make_pair(std::string("mean-aggregate"), p),
                           aggregate_maps(parts, seed_mix(iseed, "aggregate", pi++)));
        }
    }

    auto record = [&](const std::string& metric, const std::string& method, const std::string& pooling,
                      const std::function<double()>& compute) {
        try {
            out.values[{metric, method, pooling}] = compute();
        } catch (const MetricUndefined& e) {
            out.skipped.push_back({sample.id, metric + "/" + method + "/" + pooling, e.what()});
        }
    };

    for (const std::string& method : cfg.methods) {
        const uint64_t mseed = seed_mix(iseed, method.c_str());
        size_t pooling_index = 0;
        SensitivityCache cache;
        const bool want_sensitivity =
            contains(cfg.metrics, "sensitivity") && contains(plan.sens_methods, method);
        for (Pooling p : cfg.poolings) {
            const PooledMap& plane = pooled.at({method, p});
            const std::string pname = to_string(p);
            const uint64_t pidx = pooling_index++;

            if (contains(cfg.metrics, "pixel-flipping"))
                record("pixel-flipping", method, pname, [&] {
                    return pixel_flipping(m, x, plane, target, seed_mix(mseed, "flip", pidx),
                                          cfg.flip_fraction)
                        .score;
                });
            if (contains(cfg.metrics, "irof"))
                record("irof", method, pname, [&] { return irof(m, x, plane, segments, target).score; });
            if (contains(cfg.metrics, "complexity"))
                record("complexity", method, pname, [&] { return complexity(plane); });
            if (contains(cfg.metrics, "roc-auc") && any_positive)
                record("roc-auc", method, pname, [&] { return roc_auc(plane, sample.ann); });
            if (contains(cfg.metrics, "relevance-mass-accuracy") && any_positive)
                record("relevance-mass-accuracy", method, pname,
                       [&] { return relevance_mass_accuracy(plane, positive_mask); });
            if (want_sensitivity) {
                cache.rewind();
                auto explain_at = [&](const Tensor& xp) {
                    if (cache.cursor == cache.calls.size()) {
                        std::vector<Heatmap> maps;
                        if (method == "mean-aggregate") {
                            for (const std::string& base : plan.base_methods)
                                maps.push_back(explain(
                                    plan.spec_for(base), plan.model_for(base), xp, fg, target,
                                    method_needs_segments(base) ? &segments : nullptr,
                                    seed_mix(mseed, "sens", cache.calls.size())));
                        } else {
                            maps.push_back(explain(plan.spec_for(method), plan.model_for(method), xp,
                                                   fg, target,
                                                   method_needs_segments(method) ? &segments : nullptr,
                                                   seed_mix(mseed, "sens", cache.calls.size())));
                        }
                        cache.calls.push_back(std::move(maps));
                    }
                    const std::vector<Heatmap>& maps = cache.calls[cache.cursor++];
                    if (maps.size() == 1) return plane_tensor(pool_channels(maps[0], p));
                    std::vector<PooledMap> parts;
                    for (const Heatmap& hm : maps) parts.push_back(pool_channels(hm, p));
                    return plane_tensor(aggregate_maps(parts, seed_mix(mseed, "sens-agg", pidx)));
                };
                record("sensitivity", method, pname, [&] {
                    return avg_sensitivity(x, fg, explain_at, cfg.sensitivity_radius,
                                           cfg.sensitivity_samples, iseed);
                });
            }
        }

        if (scored_for_robustness && contains(plan.rob_methods, method)) {
            for (size_t k = 0; k < cfg.robustness_augs.size(); ++k) {
                const AugKind kind = cfg.robustness_augs[k];
                bool exempt = false;
                for (const EvalConfig::RobustnessSkip& s : cfg.robustness_skip)
                    exempt = exempt || (s.method == method && s.kind == kind);
                if (exempt) continue;
                const uint64_t rseed = seed_mix(mseed, "robustness", k);
                PlaneExplainer plane_of = [&](const Tensor& img,
                                              const std::vector<uint8_t>& mask) {
                    if (method == "mean-aggregate") {
                        std::vector<PooledMap> parts;
                        for (const std::string& base : plan.base_methods) {
                            SegmentMap segs;
                            const bool segs_needed = method_needs_segments(base);
                            if (segs_needed) segs = quickshift(img, mask, cfg.segmentation);
                            const Heatmap hm =
                                explain(plan.spec_for(base), plan.model_for(base), img, mask,
                                        target, segs_needed ? &segs : nullptr,
                                        seed_mix(rseed, base.c_str()));
                            parts.push_back(pool_channels(hm, Pooling::mean));
                        }
                        return aggregate_maps(parts, rseed).v;
                    }
                    SegmentMap segs;
                    const bool segs_needed = method_needs_segments(method);
                    if (segs_needed) segs = quickshift(img, mask, cfg.segmentation);
                    const Heatmap hm = explain(plan.spec_for(method), plan.model_for(method), img,
                                               mask, target, segs_needed ? &segs : nullptr, rseed);
                    return pool_channels(hm, Pooling::mean).v;
                };
                record("robustness/" + to_string(kind), method, "mean", [&] {
                    return robustness_score(m, x, fg, target, plane_of, kind, plan.half_width[k],
                                            cfg.grid_points)
                        .score;
                });
            }
        }
    }
}

}  // namespace

EvalResult evaluate(const Model& m, const SampleSet& test, const EvalConfig& cfg) {
    if (cfg.methods.empty()) throw InvalidArgument("no methods configured");
    if (cfg.poolings.empty()) throw InvalidArgument("no poolings configured");
    if (cfg.metrics.empty() && cfg.robustness_augs.empty())
        throw InvalidArgument("no metrics configured");
    for (const std::string& metric : cfg.metrics)
        if (known_metrics().count(metric) == 0)
            throw InvalidArgument("unknown metric: " + metric);
    if (cfg.max_images < 1) throw InvalidArgument("max_images must be >= 1");
    if (cfg.robustness_images > cfg.max_images)
        throw InvalidArgument("robustness_images cannot exceed max_images");
    if (cfg.workers < 1) throw InvalidArgument("workers must be >= 1");
    for (const std::string& method : cfg.methods)
        method_spec(method);  // validates the id

    EvalPlan plan;
    plan.model = &m;
    plan.cfg = &cfg;
    for (const std::string& method : cfg.methods)
        if (method != "mean-aggregate")
            plan.base_methods.push_back(method);
        else
            plan.want_aggregate = true;
    if (plan.want_aggregate && plan.base_methods.size() < 2)
        throw InvalidArgument("mean-aggregate needs at least two base methods");
    plan.sens_methods = subset_or_all(cfg.sensitivity_methods, cfg.methods, "sensitivity_methods");
    plan.rob_methods = subset_or_all(cfg.robustness_methods, cfg.methods, "robustness_methods");
    plan.need_segments = contains(cfg.metrics, "irof");
    for (const std::string& method : plan.base_methods)
        plan.need_segments = plan.need_segments || method_needs_segments(method);
    bool any_lrp = false;
    for (const std::string& method : cfg.methods) any_lrp = any_lrp || method_is_lrp(method);
    if (plan.want_aggregate)
        for (const std::string& method : plan.base_methods) any_lrp = any_lrp || method_is_lrp(method);
    if (any_lrp) plan.flat = merge_batchnorm(m);

    EvalResult result;

    // Evaluation set: the first max_images correctly classified test images.
    std::vector<const Sample*> selected;
    for (const Sample& s : test.items) {
        if (static_cast<int>(selected.size()) >= cfg.max_images) break;
        const std::vector<double> probs = predict_probs(m, s.tensor(test.h, test.w));
        const int pred = static_cast<int>(std::max_element(probs.begin(), probs.end()) -
                                          probs.begin());
        if (pred != s.label) {
            result.skipped.push_back({s.id, "image", "misclassified"});
            continue;
        }
        selected.push_back(&s);
        result.images.push_back(s.id);
    }
    if (selected.empty()) throw InvalidArgument("no correctly classified test images");

    // Robustness intervals are calibrated once over the robustness subset.
    const bool robustness_on = !cfg.robustness_augs.empty() && !plan.rob_methods.empty() &&
                               cfg.robustness_images > 0;
    if (robustness_on) {
        std::vector<Tensor> images;
        std::vector<std::vector<uint8_t>> fgs;
        std::vector<int> targets;
        const int count =
            std::min<int>(cfg.robustness_images, static_cast<int>(selected.size()));
        for (int i = 0; i < count; ++i) {
            images.push_back(selected[static_cast<size_t>(i)]->tensor(test.h, test.w));
            fgs.push_back(selected[static_cast<size_t>(i)]->fg);
            targets.push_back(selected[static_cast<size_t>(i)]->label);
        }
        for (AugKind kind : cfg.robustness_augs) {
            const CalibrationResult c =
                calibrate_interval(m, images, fgs, targets, kind, cfg.robustness_target_drop);
            plan.half_width.push_back(c.half_width);
            result.calibration.push_back({kind, c.half_width, c.hit_domain_bound, c.achieved_drop});
        }
    }

    // Per-image scoring, distributed over workers; outcomes land in
    // per-image slots so the merge order never depends on scheduling.
    std::vector<ImageOutcome> outcomes(selected.size());
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto work = [&] {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= selected.size()) break;
            try {
                score_image(plan, *selected[i], static_cast<int>(i), test.h, test.w, outcomes[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                break;
            }
        }
    };
    const int workers = std::min<int>(cfg.workers, static_cast<int>(selected.size()));
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    std::map<CellKey, std::vector<double>> observations;
    for (const ImageOutcome& o : outcomes) {
        for (const auto& [key, value] : o.values) observations[key].push_back(value);
        result.skipped.insert(result.skipped.end(), o.skipped.begin(), o.skipped.end());
    }

    // Rows come out in config order: metric, then method, then pooling,
    // with the robustness block last.
    auto emit = [&](const std::string& metric, const std::string& method,
                    const std::string& pooling) {
        const auto it = observations.find({metric, method, pooling});
        if (it == observations.end()) return;
        const auto [mean, sem] = mean_sem(it->second);
        MetricScore row;
        row.metric = metric;
        row.method = method;
        row.pooling = pooling;
        row.mean = mean;
        row.sem = sem;
        row.n = static_cast<int>(it->second.size());
        row.direction = metric_direction(metric);
        result.scores.push_back(row);
    };
    for (const std::string& metric : cfg.metrics)
        for (const std::string& method : cfg.methods)
            for (Pooling p : cfg.poolings) emit(metric, method, to_string(p));
    for (AugKind kind : cfg.robustness_augs)
        for (const std::string& method : plan.rob_methods)
            emit("robustness/" + to_string(kind), method, "mean");
    return result;
}

std::string scores_csv(const std::vector<MetricScore>& scores) {
    std::string out = "metric,method,pooling,mean,sem,n,direction\n";
    char buf[64];
    for (const MetricScore& s : scores) {
        out += s.metric + "," + s.method + "," + s.pooling + ",";
        std::snprintf(buf, sizeof buf, "%.12g", s.mean);
        out += buf;
        std::snprintf(buf, sizeof buf, ",%.12g,", s.sem);
        out += buf;
        out += std::to_string(s.n) + "," + to_string(s.direction) + "\n";
    }
    return out;
}

std::vector<MetricScore> parse_scores_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "metric,method,pooling,mean,sem,n,direction")
        throw InvalidArgument("metrics CSV header mismatch");
    std::vector<MetricScore> out;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 7)
            throw InvalidArgument("metrics CSV line " + std::to_string(lineno) +
                                  " has " + std::to_string(fields.size()) + " fields");
        MetricScore s;
        s.metric = fields[0];
        s.method = fields[1];
        s.pooling = fields[2];
        try {
            size_t used = 0;
            s.mean = std::stod(fields[3], &used);
            s.sem = std::stod(fields[4], &used);
            s.n = std::stoi(fields[5], &used);
        } catch (const std::exception&) {
            throw InvalidArgument("metrics CSV line " + std::to_string(lineno) +
                                  " has a malformed number");
        }
        s.direction = direction_from_string(fields[6]);
        out.push_back(s);
    }
    return out;
}

}  // namespace heatrank
