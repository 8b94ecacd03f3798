#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heatrank/augment.hpp"
#include "heatrank/dataset.hpp"
#include "heatrank/heatmap.hpp"
#include "heatrank/metrics.hpp"
#include "heatrank/model.hpp"
#include "heatrank/segmentation.hpp"

namespace heatrank {

// Batch evaluation plan. Methods and poolings define the table grid;
// sensitivity and robustness can be restricted to a method subset (the
// perturbation-heavy methods cost one full explanation per sample, which
// the desk preset cannot afford). An empty subset list means "all".
struct EvalConfig {
    std::vector<std::string> methods;
    std::vector<Pooling> poolings = {Pooling::mean, Pooling::max, Pooling::max_abs, Pooling::l2};
    std::vector<std::string> metrics = {"pixel-flipping",
                                        "irof",
                                        "sensitivity",
                                        "complexity",
                                        "roc-auc",
                                        "relevance-mass-accuracy"};
    std::vector<AugKind> robustness_augs;
    std::vector<std::string> robustness_methods;
    std::vector<std::string> sensitivity_methods;
    // Method/augmentation pairs exempted from robustness scoring; their
    // cells stay empty. Covers per-method runtime budgets.
    struct RobustnessSkip {
        std::string method;
        AugKind kind = AugKind::brightness;
    };
    std::vector<RobustnessSkip> robustness_skip;
    int max_images = 24;         // cap on correctly classified images
    int robustness_images = 12;  // first images also scored for robustness
    int ig_steps = 64;
    int lime_samples = 1000;
    int shap_samples = 1000;
    int sensitivity_samples = 50;
    double sensitivity_radius = 0.05;
    double flip_fraction = 0.2;
    double robustness_target_drop = 0.1;
    int grid_points = 11;
    int workers = 1;
    std::uint64_t seed = 0;
    SegmentationParams segmentation;
};

// One skipped image or one per-image metric observation that came back
// undefined; reasons surface in the evaluation report.
struct SkipRecord {
    std::string id;
    std::string what;  // "image" or "<metric>/<method>/<pooling>"
    std::string reason;
};

struct CalibrationRow {
    AugKind kind = AugKind::brightness;
    double half_width = 0.0;
    bool hit_domain_bound = false;
    double achieved_drop = 0.0;
};

struct EvalResult {
    std::vector<MetricScore> scores;  // one row per cell with >= 1 observation
    std::vector<std::string> images;  // sample ids evaluated, in order
    std::vector<SkipRecord> skipped;
    std::vector<CalibrationRow> calibration;
};

// Scores every correctly classified test image (up to max_images) on the
// configured grid. Misclassified images are skipped with a reason, as are
// per-image observations that are undefined (for example ROC-AUC on an
// image without ground-truth annotation). Deterministic in (model, set,
// config) for any worker count: per-image work is seeded by image index
// and merged in image order. Robustness intervals are calibrated once per
// augmentation over the robustness subset before scoring starts.
EvalResult evaluate(const Model& m, const SampleSet& test, const EvalConfig& cfg);

// metric,method,pooling,mean,sem,n,direction with %.12g numbers; rows in
// the order given. parse skips blank and '#' comment lines and rejects
// malformed rows and unknown directions.
std::string scores_csv(const std::vector<MetricScore>& scores);
std::vector<MetricScore> parse_scores_csv(const std::string& text);

}  // namespace heatrank
