#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace patchseg {

using Dims = std::array<std::uint32_t, 3>;
using Spacing = std::array<float, 3>;

// Dense 3D intensity grid, row-major with x varying fastest.
struct Volume {
    Dims dims{0, 0, 0};
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::vector<float> data;

    std::size_t voxels() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
    float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return data[index(x, y, z)];
    }
    // Zero outside the grid; the padding value for patch extraction.
    float at_padded(std::int64_t x, std::int64_t y, std::int64_t z) const {
        if (x < 0 || y < 0 || z < 0 || x >= dims[0] || y >= dims[1] || z >= dims[2]) return 0.0f;
        return data[(static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x];
    }
    bool in_bounds(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
    }
};

// Dense 3D class-index grid; label 0 is background.
struct LabelMap {
    Dims dims{0, 0, 0};
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::vector<std::uint16_t> labels;
    std::uint16_t num_classes = 0;

    std::size_t voxels() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
    std::uint16_t at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return labels[index(x, y, z)];
    }
};

struct NormStats {
    double mean = 0.0;
    double stddev = 1.0;
};

// MRVOL001 container I/O. Bit-exact round trips; distinct diagnostics for bad
// magic, unsupported version, header/payload inconsistencies.
void save_volume(const std::filesystem::path& path, const Volume& v);
Volume load_volume(const std::filesystem::path& path);
void save_labelmap(const std::filesystem::path& path, const LabelMap& m);
LabelMap load_labelmap(const std::filesystem::path& path);

// Global mean and population standard deviation over all voxels of all
// training volumes. Throws on an empty list or constant data.
NormStats compute_norm_stats(const std::vector<Volume>& training);

// Per-voxel (x - mean) / stddev.
Volume normalize(const Volume& v, const NormStats& s);

// 8-bit binary PGM (P5) of one slice, min-max windowed. Axis 0=x, 1=y, 2=z.
void write_pgm_slice(const std::filesystem::path& path, const Volume& v, int axis,
                     std::uint32_t slice_index);

} // namespace patchseg
