#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "patchseg/errors.hpp"
#include "patchseg/rng.hpp"
#include "patchseg/spatial.hpp"

using namespace patchseg;

TEST_CASE("k=2 grid on a 65^3 volume places landmarks at the corners") {
    const auto grid = build_grid({65, 65, 65}, 2);
    REQUIRE(grid.size() == 8);
    for (const auto& p : grid.positions)
        for (double c : p) CHECK((c == 0.0 || c == 64.0));
}

TEST_CASE("k=3 axis coordinates are {0, 32, 64}") {
    const auto grid = build_grid({65, 65, 65}, 3);
    REQUIRE(grid.size() == 27);
    // x-fastest linearization: the first three positions walk the x axis.
    CHECK(grid.positions[0][0] == 0.0);
    CHECK(grid.positions[1][0] == 32.0);
    CHECK(grid.positions[2][0] == 64.0);
}

TEST_CASE("k=5 on (64,32,16): axis-0 coordinates step by 63/4") {
    const auto grid = build_grid({64, 32, 16}, 5);
    const double expected[5] = {0.0, 15.75, 31.5, 47.25, 63.0};
    for (int i = 0; i < 5; ++i)
        CHECK(grid.positions[i][0] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("grid validation") {
    CHECK_THROWS_AS(build_grid({65, 65, 65}, 1), ValidationError);
    CHECK_THROWS_AS(build_grid({1, 65, 65}, 2), ValidationError);
}

TEST_CASE("center of a 65^3 volume is 32*sqrt(3) from all 8 corner landmarks") {
    const auto grid = build_grid({65, 65, 65}, 2);
    const auto d = distance_image(grid, 32.0, 32.0, 32.0);
    const double expect = 32.0 * std::sqrt(3.0);
    for (double v : d) CHECK(std::abs(v - expect) < 1e-9);
}

TEST_CASE("query on a landmark gives one zero entry") {
    const auto grid = build_grid({65, 65, 65}, 2);
    const auto d = distance_image(grid, 0.0, 0.0, 0.0);
    CHECK(d[0] == 0.0);
    for (std::size_t i = 1; i < d.size(); ++i) CHECK(d[i] > 0.0);
}

TEST_CASE("translation changes every entry by at most its norm") {
    const auto grid = build_grid({40, 50, 60}, 4);
    Prng rng(5, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const double x = rng.next_uniform(-10, 70), y = rng.next_uniform(-10, 70),
                     z = rng.next_uniform(-10, 70);
        const double dx = rng.next_uniform(-5, 5), dy = rng.next_uniform(-5, 5),
                     dz = rng.next_uniform(-5, 5);
        const double shift = std::sqrt(dx * dx + dy * dy + dz * dz);
        const auto a = distance_image(grid, x, y, z);
        const auto b = distance_image(grid, x + dx, y + dy, z + dz);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(std::abs(a[i] - b[i]) <= shift + 1e-12);
    }
}

TEST_CASE("rbf values") {
    CHECK(rbf_normalize({0.0}, 0.01)[0] == 1.0);
    CHECK(rbf_normalize({10.0}, 0.01)[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(std::abs(rbf_normalize({10.0}, 0.01)[0] - 0.367879) < 1e-6);
    CHECK_THROWS_AS(rbf_normalize({1.0}, 0.0), ValidationError);
    CHECK_THROWS_AS(rbf_normalize({1.0}, -0.5), ValidationError);
}

TEST_CASE("rbf reverses sort order and stays in (0, 1]") {
    std::vector<double> d{0.0, 1.0, 2.5, 7.0, 31.0, 100.0};
    const auto r = rbf_normalize(d, 0.01);
    for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(r[i] > 0.0);
        CHECK(r[i] <= 1.0);
        if (i) CHECK(r[i] < r[i - 1]);
    }
}

TEST_CASE("rbf round trip recovers squared distances") {
    const auto grid = build_grid({65, 65, 65}, 3);
    const auto d = distance_image(grid, 11.5, 40.25, 3.0);
    const double alpha = 0.01;
    const auto y = rbf_normalize(d, alpha);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double d2 = -std::log(y[i]) / alpha;
        CHECK(std::abs(d2 - d[i] * d[i]) < 1e-9 * std::max(1.0, d[i] * d[i]));
    }
}

TEST_CASE("distance image grid order is x-fastest") {
    const auto grid = build_grid({11, 21, 31}, 3);
    // Landmark (i,j,m) lives at linear index m*k^2 + j*k + i.
    const auto& p = grid.positions[1 * 9 + 2 * 3 + 0]; // i=0, j=2, m=1
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 20.0);
    CHECK(p[2] == 15.0);
    const auto d = distance_image(grid, p[0], p[1], p[2]);
    CHECK(d[1 * 9 + 2 * 3 + 0] == 0.0);
}
