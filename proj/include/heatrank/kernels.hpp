#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "heatrank/error.hpp"

// Innermost numeric kernels. Everything above (conv, dense, reductions)
// is phrased in terms of these four primitives. A scalar reference build
// always exists; wider variants are selected at runtime from CPU features
// and can be forced via set_backend() or the HEATRANK_KERNELS env var.
//
// SIMD variants use FMA where available, so results may differ from the
// scalar reference in the last bits. Equivalence tests pin the tolerance.
namespace heatrank::kernels {

struct Ops {
    // y[i] += a * x[i]
    void (*axpy)(double* y, const double* x, double a, size_t n);
    // sum of x[i] * y[i]
    double (*dot)(const double* x, const double* y, size_t n);
    double (*sum)(const double* x, size_t n);
    double (*sumsq)(const double* x, size_t n);
    const char* name;
};

extern const Ops scalar_ops;
#if defined(__x86_64__) || defined(_M_X64)
extern const Ops avx2_ops;
#endif
#if defined(__aarch64__)
extern const Ops neon_ops;
#endif

// Backends compiled into this build that the current CPU can execute.
std::vector<std::string> available_backends();

// "auto" re-runs CPU detection; otherwise the named backend is selected.
// Throws InvalidArgument for unknown or unsupported names.
void set_backend(const std::string& name);

const Ops& active();

inline void axpy(double* y, const double* x, double a, size_t n) { active().axpy(y, x, a, n); }
inline double dot(const double* x, const double* y, size_t n) { return active().dot(x, y, n); }
inline double sum(const double* x, size_t n) { return active().sum(x, n); }
inline double sumsq(const double* x, size_t n) { return active().sumsq(x, n); }

}  // namespace heatrank::kernels
