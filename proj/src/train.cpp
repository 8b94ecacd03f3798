#include "heatrank/train.hpp"

#include <cmath>

#include "heatrank/rng.hpp"

namespace heatrank {

namespace {

// One velocity buffer per parameter slot, mirroring LayerGrads.
struct Velocity {
    std::vector<double> w, b, gamma, beta;
};

void sgd_step(Model& m, const std::vector<LayerGrads>& grads, std::vector<Velocity>& vel,
              double lr, double momentum, double weight_decay) {
    auto update = [&](std::vector<double>& vbuf, double* p, const double* g, size_t n, bool decay) {
        if (vbuf.size() != n) vbuf.assign(n, 0.0);
        for (size_t i = 0; i < n; ++i) {
            const double grad = g[i] + (decay ? weight_decay * p[i] : 0.0);
            vbuf[i] = momentum * vbuf[i] - lr * grad;
            p[i] += vbuf[i];
        }
    };
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const LayerGrads& lg = grads[i];
        if (auto* c = std::get_if<Conv2d>(&m.layers[i])) {
            update(vel[i].w, c->w.data(), lg.w.data(), c->w.size(), true);
            update(vel[i].b, c->b.data(), lg.b.data(), c->b.size(), false);
        } else if (auto* d = std::get_if<Dense>(&m.layers[i])) {
            update(vel[i].w, d->w.data(), lg.w.data(), d->w.size(), true);
            update(vel[i].b, d->b.data(), lg.b.data(), d->b.size(), false);
        } else if (auto* b = std::get_if<BatchNorm>(&m.layers[i])) {
            update(vel[i].gamma, b->gamma.data(), lg.gamma.data(), b->gamma.size(), false);
            update(vel[i].beta, b->beta.data(), lg.beta.data(), b->beta.size(), false);
        }
    }
}

void update_running_stats(Model& m, const ForwardTrace& trace) {
    for (size_t i = 0; i < m.layers.size(); ++i) {
        auto* b = std::get_if<BatchNorm>(&m.layers[i]);
        if (!b || trace.bn_mean[i].empty()) continue;
        const Tensor& in = trace.inputs[i];
        const double mcount =
            static_cast<double>(in.size() / static_cast<size_t>(b->channels));
        // Normalization uses the biased variance; the running estimate keeps
        // the unbiased one.
        const double correction = mcount > 1.0 ? mcount / (mcount - 1.0) : 1.0;
        for (int c = 0; c < b->channels; ++c) {
            b->running_mean[c] =
                (1.0 - b->momentum) * b->running_mean[c] + b->momentum * trace.bn_mean[i][c];
            b->running_var[c] = (1.0 - b->momentum) * b->running_var[c] +
                                b->momentum * trace.bn_var[i][c] * correction;
        }
    }
}

}  // namespace

double accuracy(const Model& m, const SampleSet& set) {
    if (set.items.empty()) return 0.0;
    size_t correct = 0;
    // Batched inference; the batch size only affects speed here.
    const int B = 32;
    for (size_t start = 0; start < set.items.size(); start += B) {
        const int n = static_cast<int>(std::min<size_t>(B, set.items.size() - start));
        Tensor batch({n, set.ch, set.h, set.w});
        const size_t img = static_cast<size_t>(set.ch) * set.h * set.w;
        for (int k = 0; k < n; ++k)
            for (size_t i = 0; i < img; ++i)
                batch[static_cast<size_t>(k) * img + i] = set.items[start + k].image[i];
        ForwardTrace t = forward(m, batch, BnMode::inference);
        for (int k = 0; k < n; ++k) {
            int arg = 0;
            for (int c = 1; c < m.classes; ++c)
                if (t.probs[static_cast<size_t>(k) * m.classes + c] >
                    t.probs[static_cast<size_t>(k) * m.classes + arg])
                    arg = c;
            correct += arg == set.items[start + k].label;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(set.items.size());
}

TrainReport train(Model& m, const SampleSet& train_set, const SampleSet& val_set,
                  const TrainConfig& cfg) {
    if (train_set.items.empty()) throw InvalidArgument("training set is empty");
    if (cfg.batch_size <= 0) throw InvalidArgument("batch_size must be positive");

    Rng rng(seed_mix(cfg.seed, "train"));
    std::vector<Velocity> vel(m.layers.size());
    std::vector<size_t> order(train_set.items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const size_t img = static_cast<size_t>(train_set.ch) * train_set.h * train_set.w;
    TrainReport report;
    double lr = cfg.lr;
    Model best;
    double best_va = -1.0;
    const bool track_best = cfg.keep_best && !val_set.items.empty();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const int n = static_cast<int>(
                std::min<size_t>(static_cast<size_t>(cfg.batch_size), order.size() - start));
            if (n < 2) break;  // batch statistics need more than one sample
            Tensor batch({n, train_set.ch, train_set.h, train_set.w});
            std::vector<int> labels(static_cast<size_t>(n));
            for (int k = 0; k < n; ++k) {
                const Sample& s = train_set.items[order[start + static_cast<size_t>(k)]];
                labels[static_cast<size_t>(k)] = s.label;
                for (size_t i = 0; i < img; ++i) batch[static_cast<size_t>(k) * img + i] = s.image[i];
            }
            ForwardTrace trace = forward(m, batch, BnMode::train);
            TrainBackward tb = backward_train(m, trace, labels);
            if (!std::isfinite(tb.loss))
                throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batches) +
                                    " (lr=" + std::to_string(cfg.lr) + ")");
            update_running_stats(m, trace);
            sgd_step(m, tb.grads, vel, lr, cfg.momentum, cfg.weight_decay);
            epoch_loss += tb.loss;
            ++batches;
        }
        report.epochs_run = epoch + 1;
        report.final_train_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
        report.epoch_losses.push_back(report.final_train_loss);
        const double va = val_set.items.empty() ? 0.0 : accuracy(m, val_set);
        report.epoch_val_acc.push_back(va);
        if (track_best && va > best_va) {  // ties keep the earlier epoch
            best_va = va;
            best = m;
            report.best_epoch = epoch + 1;
        }
        if (!val_set.items.empty() && va >= cfg.early_stop_val_acc) break;
        lr *= cfg.lr_decay;
    }

    if (track_best && report.best_epoch > 0)
        m = best;
    else
        report.best_epoch = report.epochs_run;

    report.train_acc = accuracy(m, train_set);
    report.val_acc = val_set.items.empty() ? 0.0 : accuracy(m, val_set);
    return report;
}

}  // namespace heatrank
