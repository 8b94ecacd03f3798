#include "heatrank/lrp.hpp"

#include <cmath>
#include <variant>

#include "heatrank/error.hpp"

namespace heatrank {

namespace {

inline double stabilized(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

void check_single(const Tensor& t, const char* what) {
    if (t.rank() < 2 || t.dim(0) != 1)
        throw InvalidArgument(std::string(what) + " expects a batch of one, got " + t.shape_str());
}

}  // namespace

LrpComposite lrp_composite_from_id(const std::string& method_id) {
    LrpComposite c;
    if (method_id == "lrp-epsilon-plus-flat") {
        c.first_conv = ConvRule::flat;
        c.other_conv = ConvRule::zplus;
    } else if (method_id == "lrp-epsilon-gamma-box") {
        c.first_conv = ConvRule::zbox;
        c.other_conv = ConvRule::gamma;
    } else if (method_id == "lrp-epsilon-alpha2beta1-flat") {
        c.first_conv = ConvRule::flat;
        c.other_conv = ConvRule::alpha2beta1;
    } else {
        throw InvalidArgument("not a relevance-propagation method: " + method_id);
    }
    return c;
}

Tensor lrp_conv(const Conv2d& l, const Tensor& in, const Tensor& rel_out, ConvRule rule,
                const LrpParams& p) {
    check_single(in, "lrp_conv");
    check_single(rel_out, "lrp_conv");
    const int IC = l.in_ch, OC = l.out_ch, K = l.ksize, P = l.pad;
    const int H = in.dim(2), W = in.dim(3);
    const int OH = rel_out.dim(2), OW = rel_out.dim(3);

    Tensor rel_in(in.shape());
    const double eps = p.epsilon;

    for (int oc = 0; oc < OC; ++oc) {
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const double rj = rel_out[rel_out.idx4(0, oc, oy, ox)];
                if (rj == 0.0) continue;

                // Contribution z of each valid input position under the rule.
                double pos = 0.0, neg = 0.0, total = 0.0;
                int valid = 0;
                for (int ic = 0; ic < IC; ++ic)
                    for (int ky = 0; ky < K; ++ky) {
                        const int iy = oy + ky - P;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < K; ++kx) {
                            const int ix = ox + kx - P;
                            if (ix < 0 || ix >= W) continue;
                            const double wgt = l.w[l.w.idx4(oc, ic, ky, kx)];
                            const double a = in[in.idx4(0, ic, iy, ix)];
                            ++valid;
                            switch (rule) {
                                case ConvRule::epsilon: total += wgt * a; break;
                                case ConvRule::gamma:
                                    total += (wgt + p.gamma * std::max(wgt, 0.0)) * a;
                                    break;
                                case ConvRule::zbox:
                                    total += wgt * a - std::max(wgt, 0.0) * p.box_lo -
                                             std::min(wgt, 0.0) * p.box_hi;
                                    break;
                                case ConvRule::zplus:
                                case ConvRule::alpha2beta1: {
                                    const double z = wgt * a;
                                    if (z > 0.0) pos += z;
                                    else neg -= z;
                                    break;
                                }
                                case ConvRule::flat: break;
                            }
                        }
                    }

                double alpha = 0.0, beta = 0.0, denom = 0.0, flat_share = 0.0;
                switch (rule) {
                    case ConvRule::epsilon:
                    case ConvRule::gamma:
                    case ConvRule::zbox: denom = stabilized(total, eps); break;
                    case ConvRule::zplus:
                        alpha = 1.0;
                        beta = 0.0;
                        break;
                    case ConvRule::alpha2beta1:
                        alpha = 2.0;
                        beta = 1.0;
                        break;
                    case ConvRule::flat: flat_share = rj / static_cast<double>(valid); break;
                }

                for (int ic = 0; ic < IC; ++ic)
                    for (int ky = 0; ky < K; ++ky) {
                        const int iy = oy + ky - P;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < K; ++kx) {
                            const int ix = ox + kx - P;
                            if (ix < 0 || ix >= W) continue;
                            const double wgt = l.w[l.w.idx4(oc, ic, ky, kx)];
                            const double a = in[in.idx4(0, ic, iy, ix)];
                            double share = 0.0;
                            switch (rule) {
                                case ConvRule::epsilon: share = wgt * a / denom * rj; break;
                                case ConvRule::gamma:
                                    share = (wgt + p.gamma * std::max(wgt, 0.0)) * a / denom * rj;
                                    break;
                                case ConvRule::zbox:
                                    share = (wgt * a - std::max(wgt, 0.0) * p.box_lo -
                                             std::min(wgt, 0.0) * p.box_hi) /
                                            denom * rj;
                                    break;
                                case ConvRule::zplus:
                                case ConvRule::alpha2beta1: {
                                    const double z = wgt * a;
                                    if (z > 0.0) share = alpha * z / (pos + eps) * rj;
                                    else if (z < 0.0) share = -beta * (-z) / (neg + eps) * rj;
                                    break;
                                }
                                case ConvRule::flat: share = flat_share; break;
                            }
                            rel_in[rel_in.idx4(0, ic, iy, ix)] += share;
                        }
                    }
            }
        }
    }
    return rel_in;
}

Tensor lrp_dense_epsilon(const Dense& l, const Tensor& in, const Tensor& rel_out, double epsilon) {
    check_single(in, "lrp_dense");
    Tensor rel_in(in.shape());
    for (int j = 0; j < l.out_dim; ++j) {
        const double rj = rel_out[static_cast<size_t>(j)];
        if (rj == 0.0) continue;
        double z = 0.0;
        for (int i = 0; i < l.in_dim; ++i)
            z += l.w[static_cast<size_t>(j) * l.in_dim + i] * in[static_cast<size_t>(i)];
        const double denom = stabilized(z, epsilon);
        for (int i = 0; i < l.in_dim; ++i)
            rel_in[static_cast<size_t>(i)] +=
                l.w[static_cast<size_t>(j) * l.in_dim + i] * in[static_cast<size_t>(i)] / denom * rj;
    }
    return rel_in;
}

Tensor lrp_gap(const Tensor& in, const Tensor& rel_out, double epsilon) {
    check_single(in, "lrp_gap");
    const int C = in.dim(1);
    const size_t plane = static_cast<size_t>(in.dim(2)) * in.dim(3);
    Tensor rel_in(in.shape());
    for (int c = 0; c < C; ++c) {
        const double rc = rel_out[static_cast<size_t>(c)];
        if (rc == 0.0) continue;
        const double* a = in.data() + static_cast<size_t>(c) * plane;
        double z = 0.0;
        for (size_t k = 0; k < plane; ++k) z += a[k] / static_cast<double>(plane);
        const double denom = stabilized(z, epsilon);
        double* r = rel_in.data() + static_cast<size_t>(c) * plane;
        for (size_t k = 0; k < plane; ++k)
            r[k] = a[k] / static_cast<double>(plane) / denom * rc;
    }
    return rel_in;
}

Tensor lrp_maxpool(const Tensor& in, const Tensor& rel_out, const std::vector<int>& argmax) {
    check_single(in, "lrp_maxpool");
    const int C = rel_out.dim(1);
    const size_t oplane = static_cast<size_t>(rel_out.dim(2)) * rel_out.dim(3);
    const size_t iplane = static_cast<size_t>(in.dim(2)) * in.dim(3);
    Tensor rel_in(in.shape());
    size_t o = 0;
    for (int c = 0; c < C; ++c) {
        double* r = rel_in.data() + static_cast<size_t>(c) * iplane;
        for (size_t k = 0; k < oplane; ++k, ++o) r[argmax[o]] += rel_out[o];
    }
    return rel_in;
}

Tensor lrp_explain(const Model& m, const Tensor& image, int target, const LrpComposite& comp) {
    if (m.has_batchnorm())
        throw InvalidArgument("relevance propagation requires a canonized model without batchnorm");
    if (target < 0 || target >= m.classes) throw InvalidArgument("target class out of range");

    ForwardTrace trace = forward(m, image, BnMode::inference);

    int first_conv = -1;
    for (size_t i = 0; i < m.layers.size(); ++i) {
        if (std::holds_alternative<Conv2d>(m.layers[i])) {
            first_conv = static_cast<int>(i);
            break;
        }
    }

    Tensor rel({1, m.classes});
    rel[static_cast<size_t>(target)] = trace.logits[static_cast<size_t>(target)];

    for (int i = static_cast<int>(m.layers.size()) - 1; i >= 0; --i) {
        const Tensor& in = trace.inputs[static_cast<size_t>(i)];
        const Layer& l = m.layers[static_cast<size_t>(i)];
        if (const auto* conv = std::get_if<Conv2d>(&l)) {
            const ConvRule rule = (i == first_conv) ? comp.first_conv : comp.other_conv;
            rel = lrp_conv(*conv, in, rel, rule, comp.params);
        } else if (const auto* dense = std::get_if<Dense>(&l)) {
            rel = lrp_dense_epsilon(*dense, in, rel, comp.params.epsilon);
        } else if (std::holds_alternative<ReLU>(l)) {
            // identity for relevance
        } else if (std::holds_alternative<MaxPool2>(l)) {
            rel = lrp_maxpool(in, rel, trace.pool_argmax[static_cast<size_t>(i)]);
        } else if (std::holds_alternative<GlobalAvgPool>(l)) {
            rel = lrp_gap(in, rel, comp.params.epsilon);
        } else if (std::holds_alternative<Flatten>(l)) {
            rel.reshape(in.shape());
        } else {
            throw InvalidArgument("unsupported layer in relevance pass");
        }
    }
    rel.reshape({m.in_ch, m.in_h, m.in_w});
    return rel;
}

}  // namespace heatrank
