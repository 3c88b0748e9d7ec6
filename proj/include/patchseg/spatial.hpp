#pragma once

#include <array>
#include <vector>

#include "patchseg/volume.hpp"

namespace patchseg {

// k^3 landmarks placed uniformly along each axis, endpoints included: axis i
// carries coordinates j * (N_i - 1) / (k - 1), j = 0..k-1. Positions are in
// voxel units of the common registered space; linearized x-fastest.
struct LandmarkGrid {
    int k = 0;
    Dims dims{0, 0, 0};
    std::vector<std::array<double, 3>> positions;

    std::size_t size() const { return positions.size(); }
};

LandmarkGrid build_grid(const Dims& dims, int k);

// Euclidean distances from a query point to every landmark, as a k*k*k field
// in grid order (x-fastest). Consumed 2D as k channel planes of k x k, one
// channel per z index of the grid.
std::vector<double> distance_image(const LandmarkGrid& grid, double x, double y, double z);

// Entrywise exp(-alpha * d^2); alpha > 0. Output in (0, 1].
std::vector<double> rbf_normalize(const std::vector<double>& d, double alpha);

} // namespace patchseg
