// NEON variants for aarch64. float64x2_t is baseline on aarch64, so no
// runtime feature check is needed beyond the architecture itself.
#include "heatrank/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace heatrank::kernels {

namespace {

void axpy_neon(double* y, const double* x, double a, size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        float64x2_t y0 = vld1q_f64(y + i);
        float64x2_t y1 = vld1q_f64(y + i + 2);
        y0 = vfmaq_f64(y0, va, vld1q_f64(x + i));
        y1 = vfmaq_f64(y1, va, vld1q_f64(x + i + 2));
        vst1q_f64(y + i, y0);
        vst1q_f64(y + i + 2, y1);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double dot_neon(const double* x, const double* y, size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sum_neon(const double* x, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double sumsq_neon(const double* x, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t v = vld1q_f64(x + i);
        acc = vfmaq_f64(acc, v, v);
    }
    double s = vaddvq_f64(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

}  // namespace

const Ops neon_ops = {axpy_neon, dot_neon, sum_neon, sumsq_neon, "neon"};

}  // namespace heatrank::kernels

#endif
