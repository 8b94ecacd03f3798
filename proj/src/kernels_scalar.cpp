#include "heatrank/kernels.hpp"

namespace heatrank::kernels {

namespace {

void axpy_scalar(double* y, const double* x, double a, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_scalar(const double* x, const double* y, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

double sum_scalar(const double* x, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

double sumsq_scalar(const double* x, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i] * x[i];
    return s;
}

}  // namespace

const Ops scalar_ops = {axpy_scalar, dot_scalar, sum_scalar, sumsq_scalar, "scalar"};

}  // namespace heatrank::kernels
