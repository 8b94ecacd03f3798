#include "heatrank/kernels.hpp"

#include <atomic>
#include <cstdlib>

#include "heatrank/error.hpp"

namespace heatrank::kernels {

namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Ops* pick_auto() {
#if defined(__aarch64__)
    return &neon_ops;
#elif defined(__x86_64__) || defined(_M_X64)
    return cpu_has_avx2_fma() ? &avx2_ops : &scalar_ops;
#else
    return &scalar_ops;
#endif
}

const Ops* initial() {
    if (const char* env = std::getenv("HEATRANK_KERNELS")) {
        std::string name(env);
        if (name == "scalar") return &scalar_ops;
#if defined(__x86_64__) || defined(_M_X64)
        if (name == "avx2" && cpu_has_avx2_fma()) return &avx2_ops;
#endif
#if defined(__aarch64__)
        if (name == "neon") return &neon_ops;
#endif
        // Unknown or unsupported env request falls back to detection; the
        // explicit set_backend() API is the one that reports errors.
    }
    return pick_auto();
}

std::atomic<const Ops*> g_active{nullptr};

}  // namespace

std::vector<std::string> available_backends() {
    std::vector<std::string> out{"scalar"};
#if defined(__x86_64__) || defined(_M_X64)
    if (cpu_has_avx2_fma()) out.emplace_back("avx2");
#endif
#if defined(__aarch64__)
    out.emplace_back("neon");
#endif
    return out;
}

void set_backend(const std::string& name) {
    if (name == "auto") {
        g_active.store(pick_auto(), std::memory_order_relaxed);
        return;
    }
    if (name == "scalar") {
        g_active.store(&scalar_ops, std::memory_order_relaxed);
        return;
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (name == "avx2") {
        if (!cpu_has_avx2_fma()) throw InvalidArgument("kernel backend 'avx2' not supported by this CPU");
        g_active.store(&avx2_ops, std::memory_order_relaxed);
        return;
    }
#endif
#if defined(__aarch64__)
    if (name == "neon") {
        g_active.store(&neon_ops, std::memory_order_relaxed);
        return;
    }
#endif
    throw InvalidArgument("unknown kernel backend '" + name + "'");
}

const Ops& active() {
    const Ops* ops = g_active.load(std::memory_order_relaxed);
    if (!ops) {
        ops = initial();
        g_active.store(ops, std::memory_order_relaxed);
    }
    return *ops;
}

}  // namespace heatrank::kernels
