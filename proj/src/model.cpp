#include "heatrank/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "heatrank/kernels.hpp"
#include "heatrank/rng.hpp"

namespace heatrank {

namespace {

void check_rank4(const Tensor& t, const char* what) {
    if (t.rank() != 4) throw InvalidArgument(std::string(what) + " expects a [N,C,H,W] tensor, got " + t.shape_str());
}

Tensor conv_forward(const Conv2d& L, const Tensor& in) {
    check_rank4(in, "conv2d");
    if (in.dim(1) != L.in_ch)
        throw InvalidArgument("conv2d expects " + std::to_string(L.in_ch) + " input channels, got " + in.shape_str());
    const int N = in.dim(0), H = in.dim(2), W = in.dim(3);
    const int K = L.ksize, P = L.pad;
    const int OH = H + 2 * P - K + 1, OW = W + 2 * P - K + 1;
    if (OH <= 0 || OW <= 0) throw InvalidArgument("conv2d kernel larger than padded input " + in.shape_str());
    Tensor out({N, L.out_ch, OH, OW});
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < L.out_ch; ++oc) {
            double* oplane = out.data() + out.idx4(n, oc, 0, 0);
            std::fill(oplane, oplane + static_cast<size_t>(OH) * OW, L.b[oc]);
            for (int ic = 0; ic < L.in_ch; ++ic) {
                const double* iplane = in.data() + in.idx4(n, ic, 0, 0);
                for (int ky = 0; ky < K; ++ky) {
                    const int y0 = std::max(0, P - ky), y1 = std::min(OH, H + P - ky);
                    for (int kx = 0; kx < K; ++kx) {
                        const double wv = L.w.at(oc, ic, ky, kx);
                        if (wv == 0.0) continue;
                        const int x0 = std::max(0, P - kx), x1 = std::min(OW, W + P - kx);
                        if (x1 <= x0) continue;
                        for (int y = y0; y < y1; ++y) {
                            const int iy = y + ky - P;
                            kernels::axpy(oplane + static_cast<size_t>(y) * OW + x0,
                                          iplane + static_cast<size_t>(iy) * W + (x0 + kx - P), wv,
                                          static_cast<size_t>(x1 - x0));
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv_backward_data(const Conv2d& L, const Tensor& in, const Tensor& gout) {
    const int N = in.dim(0), H = in.dim(2), W = in.dim(3);
    const int K = L.ksize, P = L.pad;
    const int OH = gout.dim(2), OW = gout.dim(3);
    Tensor gin(in.shape());
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < L.out_ch; ++oc) {
            const double* gplane = gout.data() + gout.idx4(n, oc, 0, 0);
            for (int ic = 0; ic < L.in_ch; ++ic) {
                double* giplane = gin.data() + gin.idx4(n, ic, 0, 0);
                for (int ky = 0; ky < K; ++ky) {
                    const int y0 = std::max(0, P - ky), y1 = std::min(OH, H + P - ky);
                    for (int kx = 0; kx < K; ++kx) {
                        const double wv = L.w.at(oc, ic, ky, kx);
                        if (wv == 0.0) continue;
                        const int x0 = std::max(0, P - kx), x1 = std::min(OW, W + P - kx);
                        if (x1 <= x0) continue;
                        for (int y = y0; y < y1; ++y) {
                            const int iy = y + ky - P;
                            kernels::axpy(giplane + static_cast<size_t>(iy) * W + (x0 + kx - P),
                                          gplane + static_cast<size_t>(y) * OW + x0, wv,
                                          static_cast<size_t>(x1 - x0));
                        }
                    }
                }
            }
        }
    }
    return gin;
}

void conv_backward_params(const Conv2d& L, const Tensor& in, const Tensor& gout, LayerGrads& g) {
    const int N = in.dim(0), H = in.dim(2), W = in.dim(3);
    const int K = L.ksize, P = L.pad;
    const int OH = gout.dim(2), OW = gout.dim(3);
    g.w = Tensor(L.w.shape());
    g.b.assign(L.b.size(), 0.0);
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < L.out_ch; ++oc) {
            const double* gplane = gout.data() + gout.idx4(n, oc, 0, 0);
            g.b[oc] += kernels::sum(gplane, static_cast<size_t>(OH) * OW);
            for (int ic = 0; ic < L.in_ch; ++ic) {
                const double* iplane = in.data() + in.idx4(n, ic, 0, 0);
                for (int ky = 0; ky < K; ++ky) {
                    const int y0 = std::max(0, P - ky), y1 = std::min(OH, H + P - ky);
                    for (int kx = 0; kx < K; ++kx) {
                        const int x0 = std::max(0, P - kx), x1 = std::min(OW, W + P - kx);
                        if (x1 <= x0) continue;
                        double acc = 0.0;
                        for (int y = y0; y < y1; ++y) {
                            const int iy = y + ky - P;
                            acc += kernels::dot(gplane + static_cast<size_t>(y) * OW + x0,
                                                iplane + static_cast<size_t>(iy) * W + (x0 + kx - P),
                                                static_cast<size_t>(x1 - x0));
                        }
                        g.w.at(oc, ic, ky, kx) += acc;
                    }
                }
            }
        }
    }
}

Tensor dense_forward(const Dense& L, const Tensor& in) {
    if (in.rank() != 2 || in.dim(1) != L.in_dim)
        throw InvalidArgument("dense expects [N," + std::to_string(L.in_dim) + "] input, got " + in.shape_str());
    const int N = in.dim(0);
    Tensor out({N, L.out_dim});
    for (int n = 0; n < N; ++n) {
        const double* row = in.data() + static_cast<size_t>(n) * L.in_dim;
        for (int o = 0; o < L.out_dim; ++o)
            out[static_cast<size_t>(n) * L.out_dim + o] =
                L.b[o] + kernels::dot(L.w.data() + static_cast<size_t>(o) * L.in_dim, row,
                                      static_cast<size_t>(L.in_dim));
    }
    return out;
}

Tensor dense_backward_data(const Dense& L, const Tensor& in, const Tensor& gout) {
    const int N = in.dim(0);
    Tensor gin(in.shape());
    for (int n = 0; n < N; ++n) {
        double* grow = gin.data() + static_cast<size_t>(n) * L.in_dim;
        for (int o = 0; o < L.out_dim; ++o) {
            const double gv = gout[static_cast<size_t>(n) * L.out_dim + o];
            if (gv == 0.0) continue;
            kernels::axpy(grow, L.w.data() + static_cast<size_t>(o) * L.in_dim, gv,
                          static_cast<size_t>(L.in_dim));
        }
    }
    return gin;
}

void dense_backward_params(const Dense& L, const Tensor& in, const Tensor& gout, LayerGrads& g) {
    const int N = in.dim(0);
    g.w = Tensor(L.w.shape());
    g.b.assign(L.b.size(), 0.0);
    for (int n = 0; n < N; ++n) {
        const double* row = in.data() + static_cast<size_t>(n) * L.in_dim;
        for (int o = 0; o < L.out_dim; ++o) {
            const double gv = gout[static_cast<size_t>(n) * L.out_dim + o];
            g.b[o] += gv;
            if (gv == 0.0) continue;
            kernels::axpy(g.w.data() + static_cast<size_t>(o) * L.in_dim, row, gv,
                          static_cast<size_t>(L.in_dim));
        }
    }
}

struct BnStats {
    std::vector<double> mean, var;  // biased variance, as used for normalization
};

BnStats bn_batch_stats(const Tensor& in) {
    const int N = in.dim(0), C = in.dim(1);
    const size_t plane = in.size() / (static_cast<size_t>(N) * C);
    BnStats s;
    s.mean.assign(C, 0.0);
    s.var.assign(C, 0.0);
    const double m = static_cast<double>(N) * static_cast<double>(plane);
    for (int c = 0; c < C; ++c) {
        double acc = 0.0, acc2 = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* p = in.data() + (static_cast<size_t>(n) * C + c) * plane;
            acc += kernels::sum(p, plane);
            acc2 += kernels::sumsq(p, plane);
        }
        s.mean[c] = acc / m;
        s.var[c] = std::max(0.0, acc2 / m - s.mean[c] * s.mean[c]);
    }
    return s;
}

Tensor bn_apply(const BatchNorm& L, const Tensor& in, const std::vector<double>& mean,
                const std::vector<double>& var) {
    const int N = in.dim(0), C = in.dim(1);
    if (C != L.channels)
        throw InvalidArgument("batchnorm expects " + std::to_string(L.channels) + " channels, got " + in.shape_str());
    const size_t plane = in.size() / (static_cast<size_t>(N) * C);
    Tensor out(in.shape());
    for (int c = 0; c < C; ++c) {
        const double s = L.gamma[c] / std::sqrt(var[c] + L.eps);
        const double t = L.beta[c] - mean[c] * s;
        for (int n = 0; n < N; ++n) {
            const double* p = in.data() + (static_cast<size_t>(n) * C + c) * plane;
            double* q = out.data() + (static_cast<size_t>(n) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) q[i] = p[i] * s + t;
        }
    }
    return out;
}

Tensor maxpool_forward(const Tensor& in, std::vector<int>& argmax) {
    check_rank4(in, "maxpool2");
    const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    if (H % 2 || W % 2) throw InvalidArgument("maxpool2 requires even spatial dims, got " + in.shape_str());
    const int OH = H / 2, OW = W / 2;
    Tensor out({N, C, OH, OW});
    argmax.assign(out.size(), 0);
    size_t o = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* plane = in.data() + in.idx4(n, c, 0, 0);
            for (int y = 0; y < OH; ++y)
                for (int x = 0; x < OW; ++x, ++o) {
                    // Ties keep the first index in (dy,dx) scan order.
                    int best = (2 * y) * W + 2 * x;
                    double bv = plane[best];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int idx = (2 * y + dy) * W + (2 * x + dx);
                            if (plane[idx] > bv) {
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    out[o] = bv;
                    argmax[o] = best;
                }
        }
    return out;
}

Tensor maxpool_backward(const Tensor& in, const Tensor& gout, const std::vector<int>& argmax) {
    const int N = gout.dim(0), C = gout.dim(1);
    const size_t oplane = static_cast<size_t>(gout.dim(2)) * gout.dim(3);
    const size_t iplane = static_cast<size_t>(in.dim(2)) * in.dim(3);
    Tensor gin(in.shape());
    size_t o = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            double* gplane = gin.data() + (static_cast<size_t>(n) * C + c) * iplane;
            for (size_t i = 0; i < oplane; ++i, ++o) gplane[argmax[o]] += gout[o];
        }
    return gin;
}

void softmax_rows(const Tensor& logits, Tensor& probs) {
    const int N = logits.dim(0), C = logits.dim(1);
    for (int n = 0; n < N; ++n) {
        const double* in = logits.data() + static_cast<size_t>(n) * C;
        double* out = probs.data() + static_cast<size_t>(n) * C;
        double mx = in[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, in[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) {
            out[c] = std::exp(in[c] - mx);
            z += out[c];
        }
        for (int c = 0; c < C; ++c) out[c] /= z;
    }
}

}  // namespace

bool Model::has_batchnorm() const {
    for (const Layer& l : layers)
        if (std::holds_alternative<BatchNorm>(l)) return true;
    return false;
}

int Model::last_conv_index() const {
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i)
        if (std::holds_alternative<Conv2d>(layers[static_cast<size_t>(i)])) return i;
    return -1;
}

Model make_micro_cnn(uint64_t seed, int in_ch, int in_h, int in_w, int classes) {
    Model m;
    m.in_ch = in_ch;
    m.in_h = in_h;
    m.in_w = in_w;
    m.classes = classes;

    auto he_conv = [&](int ic, int oc, int k, int layer_idx) {
        Conv2d c;
        c.in_ch = ic;
        c.out_ch = oc;
        c.ksize = k;
        c.pad = k / 2;
        c.w = Tensor({oc, ic, k, k});
        c.b.assign(static_cast<size_t>(oc), 0.0);
        Rng rng(seed_mix(seed, "init", static_cast<uint64_t>(layer_idx)));
        const double limit = std::sqrt(6.0 / (static_cast<double>(ic) * k * k));
        for (double& v : c.w.values()) v = rng.uniform(-limit, limit);
        return c;
    };
    auto bn = [](int ch) {
        BatchNorm b;
        b.channels = ch;
        b.gamma.assign(static_cast<size_t>(ch), 1.0);
        b.beta.assign(static_cast<size_t>(ch), 0.0);
        b.running_mean.assign(static_cast<size_t>(ch), 0.0);
        b.running_var.assign(static_cast<size_t>(ch), 1.0);
        return b;
    };

    m.layers.emplace_back(he_conv(in_ch, 8, 3, 0));
    m.layers.emplace_back(bn(8));
    m.layers.emplace_back(ReLU{});
    m.layers.emplace_back(MaxPool2{});
    m.layers.emplace_back(he_conv(8, 16, 3, 4));
    m.layers.emplace_back(bn(16));
    m.layers.emplace_back(ReLU{});
    m.layers.emplace_back(MaxPool2{});
    m.layers.emplace_back(he_conv(16, 32, 3, 8));
    m.layers.emplace_back(bn(32));
    m.layers.emplace_back(ReLU{});
    m.layers.emplace_back(GlobalAvgPool{});

    Dense d;
    d.in_dim = 32;
    d.out_dim = classes;
    d.w = Tensor({classes, 32});
    d.b.assign(static_cast<size_t>(classes), 0.0);
    Rng rng(seed_mix(seed, "init", 12));
    const double limit = std::sqrt(6.0 / 32.0);
    for (double& v : d.w.values()) v = rng.uniform(-limit, limit);
    m.layers.emplace_back(std::move(d));
    return m;
}

ForwardTrace forward(const Model& m, const Tensor& batch, BnMode mode) {
    Tensor x = batch;
    if (x.rank() == 3) x.reshape({1, x.dim(0), x.dim(1), x.dim(2)});
    if (x.rank() != 4 || x.dim(1) != m.in_ch || x.dim(2) != m.in_h || x.dim(3) != m.in_w)
        throw InvalidArgument("model expects [N," + std::to_string(m.in_ch) + "," + std::to_string(m.in_h) +
                              "," + std::to_string(m.in_w) + "] input, got " + batch.shape_str());

    ForwardTrace t;
    t.inputs.reserve(m.layers.size() + 1);
    t.pool_argmax.resize(m.layers.size());
    t.bn_mean.resize(m.layers.size());
    t.bn_var.resize(m.layers.size());

    for (size_t i = 0; i < m.layers.size(); ++i) {
        t.inputs.push_back(std::move(x));
        const Tensor& in = t.inputs.back();
        const Layer& l = m.layers[i];
        if (const auto* c = std::get_if<Conv2d>(&l)) {
            x = conv_forward(*c, in);
        } else if (const auto* d = std::get_if<Dense>(&l)) {
            x = dense_forward(*d, in);
        } else if (const auto* b = std::get_if<BatchNorm>(&l)) {
            if (mode == BnMode::train) {
                BnStats s = bn_batch_stats(in);
                x = bn_apply(*b, in, s.mean, s.var);
                t.bn_mean[i] = std::move(s.mean);
                t.bn_var[i] = std::move(s.var);
            } else {
                x = bn_apply(*b, in, b->running_mean, b->running_var);
            }
        } else if (std::holds_alternative<ReLU>(l)) {
            x = in;
            for (double& v : x.values()) v = std::max(0.0, v);
        } else if (std::holds_alternative<MaxPool2>(l)) {
            x = maxpool_forward(in, t.pool_argmax[i]);
        } else if (std::holds_alternative<GlobalAvgPool>(l)) {
            check_rank4(in, "global-avg-pool");
            const int N = in.dim(0), C = in.dim(1);
            const size_t plane = static_cast<size_t>(in.dim(2)) * in.dim(3);
            x = Tensor({N, C});
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    x[static_cast<size_t>(n) * C + c] =
                        kernels::sum(in.data() + (static_cast<size_t>(n) * C + c) * plane, plane) /
                        static_cast<double>(plane);
        } else if (std::holds_alternative<Flatten>(l)) {
            x = in;
            x.reshape({in.dim(0), static_cast<int>(in.size()) / in.dim(0)});
        }
    }

    if (x.rank() != 2 || x.dim(1) != m.classes)
        throw InvalidArgument("model output is " + x.shape_str() + ", expected [N," +
                              std::to_string(m.classes) + "] logits");
    t.logits = x;
    t.probs = Tensor(x.shape());
    softmax_rows(t.logits, t.probs);
    t.inputs.push_back(std::move(x));
    return t;
}

std::vector<double> predict_probs(const Model& m, const Tensor& image) {
    ForwardTrace t = forward(m, image, BnMode::inference);
    return t.probs.values();
}

std::vector<double> batched_target_probs(const Model& m, const std::vector<Tensor>& images,
                                         int target, int chunk) {
    if (target < 0 || target >= m.classes)
        throw InvalidArgument("target class " + std::to_string(target) + " out of range");
    std::vector<double> out;
    out.reserve(images.size());
    const size_t isz = static_cast<size_t>(m.in_ch) * m.in_h * m.in_w;
    for (size_t start = 0; start < images.size(); start += static_cast<size_t>(chunk)) {
        const size_t n = std::min(static_cast<size_t>(chunk), images.size() - start);
        Tensor batch({static_cast<int>(n), m.in_ch, m.in_h, m.in_w});
        for (size_t i = 0; i < n; ++i) {
            if (images[start + i].size() != isz)
                throw InvalidArgument("image size does not match model input");
            std::memcpy(batch.data() + i * isz, images[start + i].data(), isz * sizeof(double));
        }
        ForwardTrace t = forward(m, batch, BnMode::inference);
        for (size_t i = 0; i < n; ++i)
            out.push_back(t.probs[i * static_cast<size_t>(m.classes) + static_cast<size_t>(target)]);
    }
    return out;
}

std::vector<Tensor> backward_trace(const Model& m, const ForwardTrace& trace,
                                   const std::vector<int>& targets, ReluGrad mode) {
    const int N = trace.logits.dim(0);
    if (static_cast<int>(targets.size()) != N)
        throw InvalidArgument("targets size does not match batch size");
    Tensor g(trace.logits.shape());
    for (int n = 0; n < N; ++n) {
        if (targets[n] < 0 || targets[n] >= m.classes)
            throw InvalidArgument("target class " + std::to_string(targets[n]) + " out of range");
        g[static_cast<size_t>(n) * m.classes + targets[n]] = 1.0;
    }

    std::vector<Tensor> grads(m.layers.size());
    for (int i = static_cast<int>(m.layers.size()) - 1; i >= 0; --i) {
        const Layer& l = m.layers[static_cast<size_t>(i)];
        const Tensor& in = trace.inputs[static_cast<size_t>(i)];
        if (const auto* c = std::get_if<Conv2d>(&l)) {
            g = conv_backward_data(*c, in, g);
        } else if (const auto* d = std::get_if<Dense>(&l)) {
            g = dense_backward_data(*d, in, g);
        } else if (const auto* b = std::get_if<BatchNorm>(&l)) {
            // Explainer backward passes always run on inference traces.
            Tensor gin(in.shape());
            const int C = b->channels;
            const size_t plane = in.size() / (static_cast<size_t>(in.dim(0)) * C);
            for (int n = 0; n < in.dim(0); ++n)
                for (int c2 = 0; c2 < C; ++c2) {
                    const double s = b->gamma[c2] / std::sqrt(b->running_var[c2] + b->eps);
                    const double* gp = g.data() + (static_cast<size_t>(n) * C + c2) * plane;
                    double* gi = gin.data() + (static_cast<size_t>(n) * C + c2) * plane;
                    for (size_t k = 0; k < plane; ++k) gi[k] = gp[k] * s;
                }
            g = std::move(gin);
        } else if (std::holds_alternative<ReLU>(l)) {
            Tensor gin(in.shape());
            const double* x = in.data();
            for (size_t k = 0; k < in.size(); ++k) {
                switch (mode) {
                    case ReluGrad::standard: gin[k] = x[k] > 0.0 ? g[k] : 0.0; break;
                    case ReluGrad::deconv: gin[k] = g[k] > 0.0 ? g[k] : 0.0; break;
                    case ReluGrad::guided: gin[k] = (x[k] > 0.0 && g[k] > 0.0) ? g[k] : 0.0; break;
                }
            }
            g = std::move(gin);
        } else if (std::holds_alternative<MaxPool2>(l)) {
            g = maxpool_backward(in, g, trace.pool_argmax[static_cast<size_t>(i)]);
        } else if (std::holds_alternative<GlobalAvgPool>(l)) {
            const int N2 = in.dim(0), C = in.dim(1);
            const size_t plane = static_cast<size_t>(in.dim(2)) * in.dim(3);
            Tensor gin(in.shape());
            for (int n = 0; n < N2; ++n)
                for (int c2 = 0; c2 < C; ++c2) {
                    const double gv = g[static_cast<size_t>(n) * C + c2] / static_cast<double>(plane);
                    double* gi = gin.data() + (static_cast<size_t>(n) * C + c2) * plane;
                    for (size_t k = 0; k < plane; ++k) gi[k] = gv;
                }
            g = std::move(gin);
        } else if (std::holds_alternative<Flatten>(l)) {
            g.reshape(in.shape());
        }
        grads[static_cast<size_t>(i)] = g;
    }
    return grads;
}

Tensor input_gradient(const Model& m, const Tensor& image, int target, ReluGrad mode) {
    if (image.rank() != 3)
        throw InvalidArgument("input_gradient expects a [C,H,W] image, got " + image.shape_str());
    ForwardTrace t = forward(m, image, BnMode::inference);
    std::vector<Tensor> grads = backward_trace(m, t, {target}, mode);
    Tensor g = std::move(grads[0]);
    g.reshape({m.in_ch, m.in_h, m.in_w});
    return g;
}

TrainBackward backward_train(const Model& m, const ForwardTrace& trace,
                             const std::vector<int>& labels) {
    const int N = trace.logits.dim(0), C = m.classes;
    if (static_cast<int>(labels.size()) != N)
        throw InvalidArgument("labels size does not match batch size");

    TrainBackward out;
    out.grads.resize(m.layers.size());

    Tensor g(trace.probs);
    for (int n = 0; n < N; ++n) {
        const double p = trace.probs[static_cast<size_t>(n) * C + labels[n]];
        out.loss -= std::log(std::max(p, 1e-300));
        g[static_cast<size_t>(n) * C + labels[n]] -= 1.0;
    }
    out.loss /= N;
    for (double& v : g.values()) v /= N;

    for (int i = static_cast<int>(m.layers.size()) - 1; i >= 0; --i) {
        const Layer& l = m.layers[static_cast<size_t>(i)];
        const Tensor& in = trace.inputs[static_cast<size_t>(i)];
        LayerGrads& lg = out.grads[static_cast<size_t>(i)];
        if (const auto* c = std::get_if<Conv2d>(&l)) {
            conv_backward_params(*c, in, g, lg);
            g = conv_backward_data(*c, in, g);
        } else if (const auto* d = std::get_if<Dense>(&l)) {
            dense_backward_params(*d, in, g, lg);
            g = dense_backward_data(*d, in, g);
        } else if (const auto* b = std::get_if<BatchNorm>(&l)) {
            const auto& mean = trace.bn_mean[static_cast<size_t>(i)];
            const auto& var = trace.bn_var[static_cast<size_t>(i)];
            if (mean.empty()) throw InvalidArgument("backward_train requires a train-mode forward trace");
            const int C2 = b->channels;
            const size_t plane = in.size() / (static_cast<size_t>(in.dim(0)) * C2);
            const double mcount = static_cast<double>(in.dim(0)) * static_cast<double>(plane);
            lg.gamma.assign(static_cast<size_t>(C2), 0.0);
            lg.beta.assign(static_cast<size_t>(C2), 0.0);
            Tensor gin(in.shape());
            for (int c2 = 0; c2 < C2; ++c2) {
                const double inv = 1.0 / std::sqrt(var[c2] + b->eps);
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int n = 0; n < in.dim(0); ++n) {
                    const double* xp = in.data() + (static_cast<size_t>(n) * C2 + c2) * plane;
                    const double* gp = g.data() + (static_cast<size_t>(n) * C2 + c2) * plane;
                    for (size_t k = 0; k < plane; ++k) {
                        sum_dy += gp[k];
                        sum_dy_xhat += gp[k] * (xp[k] - mean[c2]) * inv;
                    }
                }
                lg.beta[c2] = sum_dy;
                lg.gamma[c2] = sum_dy_xhat;
                const double k1 = sum_dy / mcount, k2 = sum_dy_xhat / mcount;
                for (int n = 0; n < in.dim(0); ++n) {
                    const double* xp = in.data() + (static_cast<size_t>(n) * C2 + c2) * plane;
                    const double* gp = g.data() + (static_cast<size_t>(n) * C2 + c2) * plane;
                    double* gi = gin.data() + (static_cast<size_t>(n) * C2 + c2) * plane;
                    for (size_t k = 0; k < plane; ++k) {
                        const double xhat = (xp[k] - mean[c2]) * inv;
                        gi[k] = b->gamma[c2] * inv * (gp[k] - k1 - xhat * k2);
                    }
                }
            }
            g = std::move(gin);
        } else if (std::holds_alternative<ReLU>(l)) {
            Tensor gin(in.shape());
            for (size_t k = 0; k < in.size(); ++k) gin[k] = in[k] > 0.0 ? g[k] : 0.0;
            g = std::move(gin);
        } else if (std::holds_alternative<MaxPool2>(l)) {
            g = maxpool_backward(in, g, trace.pool_argmax[static_cast<size_t>(i)]);
        } else if (std::holds_alternative<GlobalAvgPool>(l)) {
            const int N2 = in.dim(0), C2 = in.dim(1);
            const size_t plane = static_cast<size_t>(in.dim(2)) * in.dim(3);
            Tensor gin(in.shape());
            for (int n = 0; n < N2; ++n)
                for (int c2 = 0; c2 < C2; ++c2) {
                    const double gv = g[static_cast<size_t>(n) * C2 + c2] / static_cast<double>(plane);
                    double* gi = gin.data() + (static_cast<size_t>(n) * C2 + c2) * plane;
                    for (size_t k = 0; k < plane; ++k) gi[k] = gv;
                }
            g = std::move(gin);
        } else if (std::holds_alternative<Flatten>(l)) {
            g.reshape(in.shape());
        }
    }
    return out;
}

Model merge_batchnorm(const Model& m) {
    Model out;
    out.in_ch = m.in_ch;
    out.in_h = m.in_h;
    out.in_w = m.in_w;
    out.classes = m.classes;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        if (const auto* b = std::get_if<BatchNorm>(&m.layers[i])) {
            if (out.layers.empty())
                throw InvalidArgument("cannot merge batchnorm at layer " + std::to_string(i) +
                                      ": no preceding layer");
            Layer& prev = out.layers.back();
            if (auto* c = std::get_if<Conv2d>(&prev)) {
                if (c->out_ch != b->channels)
                    throw InvalidArgument("batchnorm at layer " + std::to_string(i) +
                                          " does not match preceding conv2d channels");
                const size_t per_out = c->w.size() / static_cast<size_t>(c->out_ch);
                for (int oc = 0; oc < c->out_ch; ++oc) {
                    const double s = b->gamma[oc] / std::sqrt(b->running_var[oc] + b->eps);
                    double* wp = c->w.data() + static_cast<size_t>(oc) * per_out;
                    for (size_t k = 0; k < per_out; ++k) wp[k] *= s;
                    c->b[oc] = (c->b[oc] - b->running_mean[oc]) * s + b->beta[oc];
                }
            } else if (auto* d = std::get_if<Dense>(&prev)) {
                if (d->out_dim != b->channels)
                    throw InvalidArgument("batchnorm at layer " + std::to_string(i) +
                                          " does not match preceding dense width");
                for (int o = 0; o < d->out_dim; ++o) {
                    const double s = b->gamma[o] / std::sqrt(b->running_var[o] + b->eps);
                    double* wp = d->w.data() + static_cast<size_t>(o) * d->in_dim;
                    for (int k = 0; k < d->in_dim; ++k) wp[k] *= s;
                    d->b[o] = (d->b[o] - b->running_mean[o]) * s + b->beta[o];
                }
            } else {
                throw InvalidArgument("cannot merge batchnorm at layer " + std::to_string(i) +
                                      ": preceding layer has no weights");
            }
        } else {
            out.layers.push_back(m.layers[i]);
        }
    }
    out.canonized = true;
    return out;
}

}  // namespace heatrank
