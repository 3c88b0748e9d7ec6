#include "patchseg/spatial.hpp"

#include <cmath>

#include "patchseg/errors.hpp"

namespace patchseg {

LandmarkGrid build_grid(const Dims& dims, int k) {
    if (k < 2) throw ValidationError("build_grid: k must be at least 2");
    for (auto d : dims)
        if (d < 2) throw ValidationError("build_grid: dims must each be at least 2");
    LandmarkGrid grid;
    grid.k = k;
    grid.dims = dims;
    grid.positions.reserve(static_cast<std::size_t>(k) * k * k);
    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        axis[a].resize(k);
        const double span = static_cast<double>(dims[a] - 1);
        for (int j = 0; j < k; ++j) axis[a][j] = span * j / (k - 1);
    }
    for (int m = 0; m < k; ++m)
        for (int j = 0; j < k; ++j)
            for (int i = 0; i < k; ++i)
                grid.positions.push_back({axis[0][i], axis[1][j], axis[2][m]});
    return grid;
}

std::vector<double> distance_image(const LandmarkGrid& grid, double x, double y, double z) {
    std::vector<double> out(grid.positions.size());
    for (std::size_t i = 0; i < grid.positions.size(); ++i) {
        const auto& p = grid.positions[i];
        const double dx = x - p[0], dy = y - p[1], dz = z - p[2];
        out[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return out;
}

std::vector<double> rbf_normalize(const std::vector<double>& d, double alpha) {
    if (!(alpha > 0.0)) throw ValidationError("rbf_normalize: alpha must be positive");
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = std::exp(-alpha * d[i] * d[i]);
    return out;
}

} // namespace patchseg
