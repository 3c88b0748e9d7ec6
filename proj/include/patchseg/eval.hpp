#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchseg/volume.hpp"

namespace patchseg {

// One label's membership over a voxel grid, with physical spacing.
struct BinaryMask {
    Dims dims{0, 0, 0};
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::vector<std::uint8_t> in;

    std::size_t voxels() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    bool empty_mask() const {
        for (auto b : in)
            if (b) return false;
        return true;
    }
};

BinaryMask class_mask(const LabelMap& m, std::uint16_t cls);

// 2|X n Y| / (|X| + |Y|); dice(empty, empty) = 1.
double dice(const BinaryMask& x, const BinaryMask& y);

// Voxels of X with at least one of their 6 face neighbors outside X
// (out-of-volume counts as outside); centers scaled by spacing (mm).
std::vector<std::array<double, 3>> extract_boundary(const BinaryMask& x);

// Symmetric Hausdorff / mean surface distance between boundary point sets, in
// mm, computed through an exact separable squared Euclidean distance
// transform. full_sets switches both to full voxel sets instead of surfaces.
double hausdorff(const BinaryMask& x, const BinaryMask& y, bool full_sets = false);
double msd(const BinaryMask& x, const BinaryMask& y, bool full_sets = false);

struct ClassMetrics {
    std::uint16_t cls = 0;
    double dice = 0.0;
    double hausdorff_mm = 0.0;
    double msd_mm = 0.0;
    bool dice_valid = false; // class present in at least one map
    bool dist_valid = false; // class present in both maps
};

struct MetricReport {
    std::vector<ClassMetrics> per_class; // classes 1..num_classes-1
    double mean_dice = 0.0;              // over dice-valid classes
    double mean_hausdorff_mm = 0.0;      // over dist-valid classes
    double mean_msd_mm = 0.0;
    int dice_valid_count = 0;
    int dist_valid_count = 0;
};

// Per-class comparison of classes 1..num_classes-1 (background excluded).
// Classes empty in both maps: dice 1, distances invalid, excluded from all
// averages. Classes empty in exactly one map: dice 0, distances invalid.
MetricReport evaluate_pair(const LabelMap& pred, const LabelMap& gt, bool full_sets = false);

// CSV: volume_id,class_id,dice,hausdorff_mm,msd_mm,valid with one summary row
// (class_id "mean") per volume; valid counts dist-valid classes there.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, MetricReport>>& reports);

} // namespace patchseg
