#include "patchseg/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

#include "patchseg/errors.hpp"
#include "patchseg/parallel.hpp"

namespace patchseg::kern {

namespace {

bool cpu_has_avx2() {
#if defined(PATCHSEG_BUILD_AVX2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend detect_backend() {
    Backend best = cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
    if (const char* env = std::getenv("PATCHSEG_KERNEL")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!backend_supported(Backend::avx2))
                throw ValidationError("PATCHSEG_KERNEL=avx2 requested but AVX2 is unavailable");
            return Backend::avx2;
        }
        if (std::strcmp(env, "auto") != 0)
            throw ValidationError(std::string("unknown PATCHSEG_KERNEL value: ") + env);
    }
    return best;
}

std::atomic<Backend>& backend_slot() {
    static std::atomic<Backend> slot{detect_backend()};
    return slot;
}

} // namespace

const char* backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

bool backend_supported(Backend b) {
    if (b == Backend::scalar) return true;
    return cpu_has_avx2();
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    if (!backend_supported(b))
        throw ValidationError(std::string("kernel backend not supported on this cpu: ") +
                              backend_name(b));
    backend_slot().store(b, std::memory_order_relaxed);
}

const Kernels<float>& f32_table(Backend b) {
#if defined(PATCHSEG_BUILD_AVX2)
    if (b == Backend::avx2) return detail::avx2_f32;
#endif
    (void)b;
    return detail::scalar_f32;
}

const Kernels<double>& f64_table(Backend b) {
#if defined(PATCHSEG_BUILD_AVX2)
    if (b == Backend::avx2) return detail::avx2_f64;
#endif
    (void)b;
    return detail::scalar_f64;
}

const Kernels<float>& f32() { return f32_table(active_backend()); }
const Kernels<double>& f64() { return f64_table(active_backend()); }

namespace {

// Partition the larger output axis across workers; every C element is still
// produced whole by a single worker, so any worker count gives the same bits.
template <typename T, typename Table>
void run_gemm(const Table& t, char kind, std::size_t m, std::size_t n, std::size_t k, const T* a,
              const T* b, T* c, bool accumulate) {
    const std::size_t lda = (kind == 't') ? m : k;
    const std::size_t ldb = (kind == 'n') ? n : (kind == 't' ? n : k);
    auto raw = (kind == 'n') ? t.gemm_nn : (kind == 't' ? t.gemm_tn : t.gemm_nt);
    const std::size_t work = m * n * k;
    if (work < (1u << 16) || worker_count() == 1) {
        raw(m, n, k, a, lda, b, ldb, c, n, accumulate);
        return;
    }
    if (m >= n) {
        parallel_for(m, [&](std::size_t lo, std::size_t hi) {
            const T* ablock = (kind == 't') ? a + lo : a + lo * lda;
            raw(hi - lo, n, k, ablock, lda, b, ldb, c + lo * n, n, accumulate);
        });
    } else {
        parallel_for(n, [&](std::size_t lo, std::size_t hi) {
            const T* bblock = (kind == 'x') ? b + lo * ldb : b + lo;
            raw(m, hi - lo, k, a, lda, bblock, ldb, c + lo, n, accumulate);
        });
    }
}

} // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
    run_gemm(f32(), 'n', m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
    run_gemm(f32(), 'x', m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate) {
    run_gemm(f32(), 't', m, n, k, a, b, c, accumulate);
}
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
    run_gemm(f64(), 'n', m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
    run_gemm(f64(), 'x', m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
    run_gemm(f64(), 't', m, n, k, a, b, c, accumulate);
}

} // namespace patchseg::kern
