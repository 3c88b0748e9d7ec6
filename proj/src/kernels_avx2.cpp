#include "patchseg/kernels.hpp"

#include <immintrin.h>

// AVX2 + FMA variants. Per output element the k-accumulation order matches the
// scalar reference; differences come only from FMA contraction and, in the
// reductions, from lane-strided partial sums. Equivalence tests bound both.

namespace patchseg::kern::detail {

namespace {

// ---------------------------------------------------------------- float ----

void gemm_nn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        float* crow = c + i * ldc;
        if (!accumulate) {
            std::size_t j = 0;
            const __m256 zero = _mm256_setzero_ps();
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, zero);
            for (; j < n; ++j) crow[j] = 0.0f;
        }
        for (std::size_t p = 0; p < k; ++p) {
            const float av = a[i * lda + p];
            const float* brow = b + p * ldb;
            const __m256 va = _mm256_set1_ps(av);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 vc = _mm256_loadu_ps(crow + j);
                vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
                _mm256_storeu_ps(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

float hsum8(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

void gemm_nt_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a + i * lda;
        for (std::size_t j = 0; j < n; ++j) {
            const float* brow = b + j * ldb;
            __m256 vacc = _mm256_setzero_ps();
            std::size_t p = 0;
            for (; p + 8 <= k; p += 8)
                vacc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), vacc);
            float acc = hsum8(vacc);
            for (; p < k; ++p) acc += arow[p] * brow[p];
            float& out = c[i * ldc + j];
            out = accumulate ? out + acc : acc;
        }
    }
}

void gemm_tn_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m; ++i) {
            float* crow = c + i * ldc;
            std::size_t j = 0;
            const __m256 zero = _mm256_setzero_ps();
            for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, zero);
            for (; j < n; ++j) crow[j] = 0.0f;
        }
    }
    for (std::size_t p = 0; p < k; ++p) {
        const float* arow = a + p * lda;
        const float* brow = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const float av = arow[i];
            float* crow = c + i * ldc;
            const __m256 va = _mm256_set1_ps(av);
            std::size_t j = 0;
            for (; j + 8 <= n; j += 8) {
                __m256 vc = _mm256_loadu_ps(crow + j);
                vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
                _mm256_storeu_ps(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void relu_fwd_f32(const float* x, float* y, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f32(const float* x, const float* dy, float* dx, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_and_ps(_mm256_loadu_ps(dy + i), mask));
    }
    for (; i < n; ++i) dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
}

void add_f32(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void axpy_f32(std::size_t n, float alpha, const float* x, float* y) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f32(std::size_t n, float alpha, float* x) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

void sgd_update_f32(std::size_t n, float* w, float* v, const float* g, float lr, float mu,
                    float wd) {
    const __m256 vlr = _mm256_set1_ps(-lr);
    const __m256 vmu = _mm256_set1_ps(mu);
    const __m256 vwd = _mm256_set1_ps(wd);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 vw = _mm256_loadu_ps(w + i);
        const __m256 vg = _mm256_fmadd_ps(vwd, vw, _mm256_loadu_ps(g + i));
        const __m256 vv = _mm256_fmadd_ps(vlr, vg, _mm256_mul_ps(vmu, _mm256_loadu_ps(v + i)));
        _mm256_storeu_ps(v + i, vv);
        _mm256_storeu_ps(w + i, _mm256_add_ps(vw, vv));
    }
    for (; i < n; ++i) {
        v[i] = mu * v[i] - lr * (g[i] + wd * w[i]);
        w[i] += v[i];
    }
}

double hsum4(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

double reduce_sum_f32(const float* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_cvtps_pd(_mm_loadu_ps(x + i)));
    double s = hsum4(acc);
    for (; i < n; ++i) s += static_cast<double>(x[i]);
    return s;
}

double reduce_sumsq_f32(const float* x, std::size_t n, double mean) {
    const __m256d vm = _mm256_set1_pd(mean);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_cvtps_pd(_mm_loadu_ps(x + i)), vm);
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum4(acc);
    for (; i < n; ++i) {
        const double d = static_cast<double>(x[i]) - mean;
        s += d * d;
    }
    return s;
}

// --------------------------------------------------------------- double ----

void gemm_nn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        if (!accumulate) {
            std::size_t j = 0;
            const __m256d zero = _mm256_setzero_pd();
            for (; j + 4 <= n; j += 4) _mm256_storeu_pd(crow + j, zero);
            for (; j < n; ++j) crow[j] = 0.0;
        }
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * lda + p];
            const double* brow = b + p * ldb;
            const __m256d va = _mm256_set1_pd(av);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * lda;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * ldb;
            __m256d vacc = _mm256_setzero_pd();
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4)
                vacc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p), vacc);
            double acc = hsum4(vacc);
            for (; p < k; ++p) acc += arow[p] * brow[p];
            double& out = c[i * ldc + j];
            out = accumulate ? out + acc : acc;
        }
    }
}

void gemm_tn_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = c + i * ldc;
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        }
    }
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * lda;
        const double* brow = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * ldc;
            const __m256d va = _mm256_set1_pd(av);
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4) {
                __m256d vc = _mm256_loadu_pd(crow + j);
                vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(brow + j), vc);
                _mm256_storeu_pd(crow + j, vc);
            }
            for (; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void relu_fwd_f64(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_f64(const double* x, const double* dy, double* dx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(dx + i, _mm256_and_pd(_mm256_loadu_pd(dy + i), mask));
    }
    for (; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void add_f64(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void axpy_f64(std::size_t n, double alpha, const double* x, double* y) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f64(std::size_t n, double alpha, double* x) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

void sgd_update_f64(std::size_t n, double* w, double* v, const double* g, double lr, double mu,
                    double wd) {
    const __m256d vlr = _mm256_set1_pd(-lr);
    const __m256d vmu = _mm256_set1_pd(mu);
    const __m256d vwd = _mm256_set1_pd(wd);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vw = _mm256_loadu_pd(w + i);
        const __m256d vg = _mm256_fmadd_pd(vwd, vw, _mm256_loadu_pd(g + i));
        const __m256d vv = _mm256_fmadd_pd(vlr, vg, _mm256_mul_pd(vmu, _mm256_loadu_pd(v + i)));
        _mm256_storeu_pd(v + i, vv);
        _mm256_storeu_pd(w + i, _mm256_add_pd(vw, vv));
    }
    for (; i < n; ++i) {
        v[i] = mu * v[i] - lr * (g[i] + wd * w[i]);
        w[i] += v[i];
    }
}

double reduce_sum_f64(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum4(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

double reduce_sumsq_f64(const double* x, std::size_t n, double mean) {
    const __m256d vm = _mm256_set1_pd(mean);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum4(acc);
    for (; i < n; ++i) {
        const double d = x[i] - mean;
        s += d * d;
    }
    return s;
}

} // namespace

const Kernels<float> avx2_f32 = {
    &gemm_nn_f32, &gemm_nt_f32, &gemm_tn_f32, &relu_fwd_f32, &relu_bwd_f32, &add_f32,
    &axpy_f32,    &scale_f32,   &sgd_update_f32, &reduce_sum_f32, &reduce_sumsq_f32,
};

const Kernels<double> avx2_f64 = {
    &gemm_nn_f64, &gemm_nt_f64, &gemm_tn_f64, &relu_fwd_f64, &relu_bwd_f64, &add_f64,
    &axpy_f64,    &scale_f64,   &sgd_update_f64, &reduce_sum_f64, &reduce_sumsq_f64,
};

} // namespace patchseg::kern::detail
