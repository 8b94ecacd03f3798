#pragma once

// Shared fixtures for unit and acceptance tests: random model stacks with
// randomized BatchNorm statistics, plus finite-difference scaffolding.

#include <vector>

#include "heatrank/model.hpp"
#include "heatrank/rng.hpp"

namespace testutil {

using namespace heatrank;

// Random conv/bn/relu/pool stack ending in gap-or-flatten plus dense.
// BatchNorm running stats are randomized so folding is a real transform.
inline Model random_net(Rng& rng, int in_ch = 3, int in_hw = 8, int classes = 2) {
    Model m;
    m.in_ch = in_ch;
    m.in_h = in_hw;
    m.in_w = in_hw;
    m.classes = classes;

    int ch = in_ch, hw = in_hw;
    const int blocks = 1 + rng.index(2);
    for (int bidx = 0; bidx < blocks; ++bidx) {
        Conv2d c;
        c.in_ch = ch;
        c.out_ch = 3 + rng.index(4);
        c.ksize = rng.uniform() < 0.3 ? 1 : 3;
        c.pad = c.ksize / 2;
        c.w = Tensor({c.out_ch, c.in_ch, c.ksize, c.ksize});
        const double limit = std::sqrt(6.0 / (static_cast<double>(c.in_ch) * c.ksize * c.ksize));
        for (double& v : c.w.values()) v = rng.uniform(-limit, limit);
        c.b.resize(static_cast<size_t>(c.out_ch));
        for (double& v : c.b) v = rng.uniform(-0.1, 0.1);
        ch = c.out_ch;
        m.layers.emplace_back(std::move(c));

        if (rng.uniform() < 0.8) {
            BatchNorm b;
            b.channels = ch;
            for (int i = 0; i < ch; ++i) {
                b.gamma.push_back(rng.uniform(0.5, 1.5));
                b.beta.push_back(rng.uniform(-0.3, 0.3));
                b.running_mean.push_back(rng.uniform(-0.5, 0.5));
                b.running_var.push_back(rng.uniform(0.5, 2.0));
            }
            m.layers.emplace_back(std::move(b));
        }
        m.layers.emplace_back(ReLU{});
        if (hw % 2 == 0 && hw >= 4 && rng.uniform() < 0.6) {
            m.layers.emplace_back(MaxPool2{});
            hw /= 2;
        }
    }

    if (rng.uniform() < 0.5) {
        m.layers.emplace_back(GlobalAvgPool{});
        Dense d;
        d.in_dim = ch;
        d.out_dim = classes;
        d.w = Tensor({classes, ch});
        for (double& v : d.w.values()) v = rng.uniform(-0.7, 0.7);
        d.b.resize(static_cast<size_t>(classes));
        for (double& v : d.b) v = rng.uniform(-0.1, 0.1);
        m.layers.emplace_back(std::move(d));
    } else {
        m.layers.emplace_back(Flatten{});
        Dense d;
        d.in_dim = ch * hw * hw;
        d.out_dim = classes;
        d.w = Tensor({classes, d.in_dim});
        const double limit = std::sqrt(6.0 / d.in_dim);
        for (double& v : d.w.values()) v = rng.uniform(-limit, limit);
        d.b.resize(static_cast<size_t>(classes));
        for (double& v : d.b) v = rng.uniform(-0.1, 0.1);
        m.layers.emplace_back(std::move(d));
    }
    return m;
}

inline Tensor random_image(Rng& rng, int c, int h, int w) {
    Tensor t({c, h, w});
    for (double& v : t.values()) v = rng.uniform();
    return t;
}

inline double logit_at(const Model& m, const Tensor& image, int target) {
    ForwardTrace t = forward(m, image);
    return t.logits[static_cast<size_t>(target)];
}

// Pattern of all piecewise-linear switches (ReLU gates, maxpool winners).
// Central differences are only trusted when the pattern is identical on
// both sides of the probe.
inline std::vector<int> switch_pattern(const Model& m, const Tensor& image) {
    ForwardTrace t = forward(m, image);
    std::vector<int> pat;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        if (std::holds_alternative<ReLU>(m.layers[i]))
            for (double v : t.inputs[i].values()) pat.push_back(v > 0.0 ? 1 : 0);
        if (std::holds_alternative<MaxPool2>(m.layers[i]))
            for (int a : t.pool_argmax[i]) pat.push_back(a);
    }
    return pat;
}

struct FdProbe {
    double analytic = 0.0, fd = 0.0;
    bool valid = false;  // false when the probe crossed a kink
};

inline FdProbe fd_input_probe(const Model& m, const Tensor& image, int target, size_t flat_index,
                              double h = 1e-4) {
    FdProbe p;
    Tensor g = input_gradient(m, image, target, ReluGrad::standard);
    p.analytic = g[flat_index];
    Tensor xp = image, xm = image;
    xp[flat_index] += h;
    xm[flat_index] -= h;
    if (switch_pattern(m, xp) != switch_pattern(m, xm)) return p;
    p.fd = (logit_at(m, xp, target) - logit_at(m, xm, target)) / (2.0 * h);
    p.valid = true;
    return p;
}

inline double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / denom;
}

}  // namespace testutil
