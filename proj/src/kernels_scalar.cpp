#include "patchseg/kernels.hpp"

namespace patchseg::kern::detail {

namespace {

template <typename T>
void gemm_nn_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * ldc;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
        }
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * lda + p];
            const T* brow = b + p * ldb;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void gemm_nt_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * lda;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * ldb;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            T& out = c[i * ldc + j];
            out = accumulate ? out + acc : acc;
        }
    }
}

template <typename T>
void gemm_tn_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = T(0);
    }
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * lda;
        const T* brow = b + p * ldb;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            T* crow = c + i * ldc;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename T>
void relu_fwd_impl(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_bwd_impl(const T* x, const T* dy, T* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <typename T>
void add_impl(const T* a, const T* b, T* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void axpy_impl(std::size_t n, T alpha, const T* x, T* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale_impl(std::size_t n, T alpha, T* x) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename T>
void sgd_update_impl(std::size_t n, T* w, T* v, const T* g, T lr, T mu, T wd) {
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = mu * v[i] - lr * (g[i] + wd * w[i]);
        w[i] += v[i];
    }
}

template <typename T>
double reduce_sum_impl(const T* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]);
    return s;
}

template <typename T>
double reduce_sumsq_impl(const T* x, std::size_t n, double mean) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(x[i]) - mean;
        s += d * d;
    }
    return s;
}

template <typename T>
constexpr Kernels<T> make_table() {
    return Kernels<T>{
        &gemm_nn_impl<T>, &gemm_nt_impl<T>,  &gemm_tn_impl<T>,   &relu_fwd_impl<T>,
        &relu_bwd_impl<T>, &add_impl<T>,     &axpy_impl<T>,      &scale_impl<T>,
        &sgd_update_impl<T>, &reduce_sum_impl<T>, &reduce_sumsq_impl<T>,
    };
}

} // namespace

const Kernels<float> scalar_f32 = make_table<float>();
const Kernels<double> scalar_f64 = make_table<double>();

} // namespace patchseg::kern::detail
