#pragma once

#include <cstddef>

namespace patchseg::kern {

// Arithmetic inner loops used by the network engine and the volume statistics.
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2
// variant selected at runtime. The two are equivalence-tested against each
// other; within one backend results are bitwise reproducible because every
// output element is accumulated in a fixed order by exactly one worker.
//
// Matrix conventions: row-major, contiguous unless a leading dimension is
// given. gemm_nn computes C[MxN] (+)= A[MxK] * B[KxN]; gemm_nt takes B as
// [NxK] (dot of rows); gemm_tn takes A as [KxM].

template <typename T>
struct Kernels {
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                    const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
    void (*relu_fwd)(const T* x, T* y, std::size_t n);
    void (*relu_bwd)(const T* x, const T* dy, T* dx, std::size_t n);
    void (*add)(const T* a, const T* b, T* out, std::size_t n);
    void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
    void (*scale)(std::size_t n, T alpha, T* x);
    // v := mu*v - lr*(g + wd*w); w += v
    void (*sgd_update)(std::size_t n, T* w, T* v, const T* g, T lr, T mu, T wd);
    double (*reduce_sum)(const T* x, std::size_t n);
    double (*reduce_sumsq)(const T* x, std::size_t n, double mean);
};

enum class Backend { scalar, avx2 };

const char* backend_name(Backend b);
bool backend_supported(Backend b);

// Active backend: PATCHSEG_KERNEL=scalar|avx2|auto (default auto = best supported).
Backend active_backend();
void set_backend(Backend b); // throws ValidationError if unsupported

const Kernels<float>& f32();
const Kernels<double>& f64();

// Specific backend tables (for equivalence tests).
const Kernels<float>& f32_table(Backend b);
const Kernels<double>& f64_table(Backend b);

namespace detail {
extern const Kernels<float> scalar_f32;
extern const Kernels<double> scalar_f64;
#if defined(PATCHSEG_BUILD_AVX2)
extern const Kernels<float> avx2_f32;
extern const Kernels<double> avx2_f64;
#endif
} // namespace detail

// Convenience wrappers over the active backend that parallelize large GEMMs
// across workers by partitioning output rows or columns; each output element
// is still computed whole by one worker, so results do not depend on the
// worker count.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
             bool accumulate);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

inline const Kernels<float>& table_for(float) { return f32(); }
inline const Kernels<double>& table_for(double) { return f64(); }

} // namespace patchseg::kern
