#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "patchseg/kernels.hpp"
#include "patchseg/rng.hpp"

using namespace patchseg;

namespace {

std::vector<float> random_vec(std::size_t n, Prng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.next_uniform(-1.0, 1.0));
    return v;
}

std::vector<double> to_f64(const std::vector<float>& v) {
    return std::vector<double>(v.begin(), v.end());
}

// Reference product in double via the scalar f64 table.
std::vector<double> ref_gemm(char kind, std::size_t m, std::size_t n, std::size_t k,
                             const std::vector<float>& a, const std::vector<float>& b) {
    const auto& t = kern::f64_table(kern::Backend::scalar);
    std::vector<double> c(m * n, 0.0);
    const auto a64 = to_f64(a), b64 = to_f64(b);
    if (kind == 'n') t.gemm_nn(m, n, k, a64.data(), k, b64.data(), n, c.data(), n, false);
    if (kind == 'x') t.gemm_nt(m, n, k, a64.data(), k, b64.data(), k, c.data(), n, false);
    if (kind == 't') t.gemm_tn(m, n, k, a64.data(), m, b64.data(), n, c.data(), n, false);
    return c;
}

struct GemmCase {
    std::size_t m, n, k;
};

const GemmCase kGemmCases[] = {{1, 1, 1},   {2, 2, 2},   {3, 5, 4},  {8, 8, 8},
                               {17, 31, 23}, {1, 64, 7},  {5, 1, 9},  {13, 9, 65},
                               {7, 40, 33},  {25, 19, 50}};

} // namespace

TEST_CASE("gemm_nn hand oracle") {
    // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
    const std::vector<float> a{1, 2, 3, 4}, b{5, 6, 7, 8};
    std::vector<float> c(4, -1.0f);
    kern::gemm_nn(2, 2, 2, a.data(), b.data(), c.data(), false);
    CHECK(c == std::vector<float>{19, 22, 43, 50});
}

TEST_CASE("gemm accumulate flag") {
    const std::vector<float> a{1, 0, 0, 1}, b{2, 3, 4, 5};
    std::vector<float> c{10, 10, 10, 10};
    kern::gemm_nn(2, 2, 2, a.data(), b.data(), c.data(), true);
    CHECK(c == std::vector<float>{12, 13, 14, 15});
}

TEST_CASE("gemm backends agree with the double reference") {
    Prng rng(42, 7);
    for (const char kind : {'n', 'x', 't'}) {
        for (const auto& cs : kGemmCases) {
            const auto a = random_vec(cs.m * cs.k, rng);
            const auto b = random_vec(cs.k * cs.n, rng);
            const auto ref = ref_gemm(kind, cs.m, cs.n, cs.k, a, b);
            for (const auto backend : {kern::Backend::scalar, kern::Backend::avx2}) {
                if (!kern::backend_supported(backend)) continue;
                const auto& t = kern::f32_table(backend);
                std::vector<float> c(cs.m * cs.n, 0.0f);
                const std::size_t lda = kind == 't' ? cs.m : cs.k;
                const std::size_t ldb = kind == 'x' ? cs.k : cs.n;
                if (kind == 'n')
                    t.gemm_nn(cs.m, cs.n, cs.k, a.data(), lda, b.data(), ldb, c.data(), cs.n,
                              false);
                if (kind == 'x')
                    t.gemm_nt(cs.m, cs.n, cs.k, a.data(), lda, b.data(), ldb, c.data(), cs.n,
                              false);
                if (kind == 't')
                    t.gemm_tn(cs.m, cs.n, cs.k, a.data(), lda, b.data(), ldb, c.data(), cs.n,
                              false);
                const double tol = 4.0 * static_cast<double>(cs.k) * 1.2e-7 + 1e-7;
                for (std::size_t i = 0; i < c.size(); ++i)
                    CHECK(std::abs(c[i] - ref[i]) <= tol * std::max(1.0, std::abs(ref[i])));
            }
        }
    }
}

TEST_CASE("gemm f64 backends agree tightly") {
    Prng rng(43, 7);
    for (const auto& cs : kGemmCases) {
        auto a32 = random_vec(cs.m * cs.k, rng);
        auto b32 = random_vec(cs.k * cs.n, rng);
        const auto a = to_f64(a32), b = to_f64(b32);
        std::vector<double> cs_out(cs.m * cs.n, 0.0), ca_out(cs.m * cs.n, 0.0);
        kern::f64_table(kern::Backend::scalar)
            .gemm_nn(cs.m, cs.n, cs.k, a.data(), cs.k, b.data(), cs.n, cs_out.data(), cs.n, false);
        if (!kern::backend_supported(kern::Backend::avx2)) return;
        kern::f64_table(kern::Backend::avx2)
            .gemm_nn(cs.m, cs.n, cs.k, a.data(), cs.k, b.data(), cs.n, ca_out.data(), cs.n, false);
        for (std::size_t i = 0; i < cs_out.size(); ++i)
            CHECK(std::abs(cs_out[i] - ca_out[i]) <=
                  1e-14 * static_cast<double>(cs.k) * std::max(1.0, std::abs(cs_out[i])));
    }
}

TEST_CASE("elementwise kernels: scalar and avx2 equivalence incl. tails") {
    if (!kern::backend_supported(kern::Backend::avx2)) return;
    Prng rng(44, 7);
    const auto& ks = kern::f32_table(kern::Backend::scalar);
    const auto& ka = kern::f32_table(kern::Backend::avx2);
    for (std::size_t n = 1; n <= 35; ++n) {
        const auto x = random_vec(n, rng);
        const auto y0 = random_vec(n, rng);

        std::vector<float> r1(n), r2(n);
        ks.relu_fwd(x.data(), r1.data(), n);
        ka.relu_fwd(x.data(), r2.data(), n);
        CHECK(r1 == r2); // max against zero: bitwise identical

        ks.relu_bwd(x.data(), y0.data(), r1.data(), n);
        ka.relu_bwd(x.data(), y0.data(), r2.data(), n);
        CHECK(r1 == r2);

        ks.add(x.data(), y0.data(), r1.data(), n);
        ka.add(x.data(), y0.data(), r2.data(), n);
        CHECK(r1 == r2);

        auto ys = y0, ya = y0;
        ks.axpy(n, 0.37f, x.data(), ys.data());
        ka.axpy(n, 0.37f, x.data(), ya.data());
        for (std::size_t i = 0; i < n; ++i) CHECK(ys[i] == doctest::Approx(ya[i]).epsilon(1e-6));

        auto ss = x, sa = x;
        ks.scale(n, -1.75f, ss.data());
        ka.scale(n, -1.75f, sa.data());
        CHECK(ss == sa); // single multiply: bitwise identical
    }
}

TEST_CASE("sgd_update kernel equivalence and hand values") {
    const auto& k = kern::f32();
    // w=1, g=0, wd=0.1, mu=0, lr=1e-3 -> w = 0.9999
    std::vector<float> w{1.0f}, v{0.0f}, g{0.0f};
    k.sgd_update(1, w.data(), v.data(), g.data(), 1e-3f, 0.0f, 0.1f);
    CHECK(w[0] == doctest::Approx(0.9999).epsilon(1e-6));

    // plain SGD when mu=0, wd=0
    w = {2.0f};
    v = {0.0f};
    g = {0.5f};
    k.sgd_update(1, w.data(), v.data(), g.data(), 0.1f, 0.0f, 0.0f);
    CHECK(w[0] == doctest::Approx(2.0 - 0.1 * 0.5));

    // momentum accumulates: v1 = -lr*g; v2 = mu*v1 - lr*g
    w = {0.0f};
    v = {0.0f};
    g = {1.0f};
    k.sgd_update(1, w.data(), v.data(), g.data(), 0.1f, 0.9f, 0.0f);
    k.sgd_update(1, w.data(), v.data(), g.data(), 0.1f, 0.9f, 0.0f);
    CHECK(v[0] == doctest::Approx(-0.19).epsilon(1e-6));
    CHECK(w[0] == doctest::Approx(-0.29).epsilon(1e-6));

    if (kern::backend_supported(kern::Backend::avx2)) {
        Prng rng(45, 7);
        const std::size_t n = 29;
        auto w1 = random_vec(n, rng);
        auto w2 = w1;
        auto v1 = random_vec(n, rng);
        auto v2 = v1;
        const auto gr = random_vec(n, rng);
        kern::f32_table(kern::Backend::scalar)
            .sgd_update(n, w1.data(), v1.data(), gr.data(), 1e-2f, 0.9f, 1e-3f);
        kern::f32_table(kern::Backend::avx2)
            .sgd_update(n, w2.data(), v2.data(), gr.data(), 1e-2f, 0.9f, 1e-3f);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(w1[i] == doctest::Approx(w2[i]).epsilon(1e-6));
            CHECK(v1[i] == doctest::Approx(v2[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("reductions agree across backends") {
    Prng rng(46, 7);
    for (std::size_t n : {1u, 5u, 16u, 33u, 1000u, 4097u}) {
        const auto x = random_vec(n, rng);
        const double s1 = kern::f32_table(kern::Backend::scalar).reduce_sum(x.data(), n);
        const double q1 = kern::f32_table(kern::Backend::scalar).reduce_sumsq(x.data(), n, 0.25);
        if (!kern::backend_supported(kern::Backend::avx2)) continue;
        const double s2 = kern::f32_table(kern::Backend::avx2).reduce_sum(x.data(), n);
        const double q2 = kern::f32_table(kern::Backend::avx2).reduce_sumsq(x.data(), n, 0.25);
        CHECK(s1 == doctest::Approx(s2).epsilon(1e-12));
        CHECK(q1 == doctest::Approx(q2).epsilon(1e-12));
    }
}

TEST_CASE("backend dispatch reports a valid active backend") {
    const auto b = kern::active_backend();
    CHECK(kern::backend_supported(b));
    CHECK((std::string(kern::backend_name(b)) == "scalar" ||
           std::string(kern::backend_name(b)) == "avx2"));
}

TEST_CASE("wrapper gemm results are identical for any worker split") {
    // The wrapper partitions output rows/columns; every element is computed
    // whole, so the result must match the raw single-call kernel bitwise.
    Prng rng(47, 7);
    const std::size_t m = 37, n = 53, k = 29;
    const auto a = random_vec(m * k, rng);
    const auto b = random_vec(k * n, rng);
    std::vector<float> c1(m * n, 0.0f), c2(m * n, 0.0f);
    kern::gemm_nn(m, n, k, a.data(), b.data(), c1.data(), false);
    kern::f32().gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n, false);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
}
