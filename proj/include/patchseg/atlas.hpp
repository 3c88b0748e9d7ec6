#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "patchseg/volume.hpp"

namespace patchseg {

// Per-voxel class probability field estimated from registered training label
// maps with Laplace smoothing. Stored class-major (num_classes full volumes
// concatenated), matching the on-disk layout.
struct ProbAtlas {
    Dims dims{0, 0, 0};
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::uint16_t num_classes = 0;
    std::vector<float> probs; // [class][z][y][x]

    std::size_t voxels() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
};

// p(c|v) = (count_c(v) + eps) / (N + num_classes * eps).
ProbAtlas build_atlas(const std::vector<LabelMap>& maps, double eps);

// Stored vector at an in-bounds voxel; the uniform vector 1/num_classes for
// out-of-bounds queries (padded patch extraction).
std::vector<float> query_atlas(const ProbAtlas& atlas, std::int64_t x, std::int64_t y,
                               std::int64_t z);

// MRVOL001 container, payload code 2.
void save_atlas(const std::filesystem::path& path, const ProbAtlas& atlas);
ProbAtlas load_atlas(const std::filesystem::path& path);

} // namespace patchseg
