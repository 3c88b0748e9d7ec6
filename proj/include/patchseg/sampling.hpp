#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "patchseg/atlas.hpp"
#include "patchseg/rng.hpp"
#include "patchseg/spatial.hpp"
#include "patchseg/volume.hpp"

namespace patchseg {

// Slicing plane for 2D patch extraction, named by the axis normal to it.
enum class Plane { axial /*z*/, coronal /*y*/, sagittal /*x*/ };

constexpr int kPatchSize = 25;     // native patch edge
constexpr int kMidWindow = 51;     // subsampled to 25
constexpr int kLargeWindow = 71;   // subsampled to 25
constexpr int kPatch3d = 15;       // 3D patch edge
constexpr int kAugmentWindow = 101; // transformed source window edge

using Patch2d = std::array<float, kPatchSize * kPatchSize>;

// Per-voxel network input bundle. Optional members are sized iff the
// corresponding branch is enabled.
struct PatchSample {
    Patch2d p25{}, p51s{}, p71s{};
    std::vector<float> p3d;        // kPatch3d^3 when present
    std::vector<float> dist;       // k^3 when present
    std::vector<float> atlas_prob; // num_classes when present
    std::array<std::uint32_t, 3> center{0, 0, 0};
    std::uint16_t target = 0;
};

struct AugmentParams {
    double scale = 1.0;     // [0.9, 1.1]
    double angle_deg = 0.0; // [-10, 10]
};

struct MultiscalePatches {
    Patch2d p25, p51s, p71s;
};

// Native 25x25 window plus the 51x51 and 71x71 windows bilinearly resampled
// to 25x25; windows overlapping the volume boundary are zero padded.
MultiscalePatches extract_multiscale_2d(const Volume& v, const std::array<std::uint32_t, 3>& center,
                                        Plane plane);

// 15^3 window, zero padded at boundaries.
std::vector<float> extract_patch_3d(const Volume& v, const std::array<std::uint32_t, 3>& center);

// Rotates and rescales a 101x101 source window about its center with bilinear
// interpolation, then extracts the three scale windows from the transformed
// window as in extract_multiscale_2d.
MultiscalePatches augment(const Volume& v, const std::array<std::uint32_t, 3>& center, Plane plane,
                          const AugmentParams& params);

AugmentParams random_augment_params(Prng& rng);

enum class SamplingMode { natural, class_uniform };

struct SampledCenter {
    std::uint32_t volume_index;
    std::array<std::uint32_t, 3> center;
    std::uint16_t target;
};

// Draws n training centers: natural = uniform over all voxels of all volumes;
// class_uniform = class uniform over [0, num_classes), then a voxel of that
// class uniform over its occurrences. Deterministic given seed.
std::vector<SampledCenter> sample_centers(const std::vector<LabelMap>& labelmaps, std::size_t n,
                                          SamplingMode mode, std::uint64_t seed);

struct SampleOptions {
    Plane plane = Plane::axial;
    bool with_3d = false;
    bool with_dist = false;
    bool with_atlas = false;
    bool augmented = false; // training-time augmentation of the 2D patches
};

// Assembles the full input bundle for one center.
PatchSample build_sample(const Volume& v, const std::array<std::uint32_t, 3>& center,
                         std::uint16_t target, const SampleOptions& opt, const LandmarkGrid* grid,
                         const ProbAtlas* atlas, Prng* augment_rng);

// sample_centers + build_sample over normalized volumes.
std::vector<PatchSample> sample_batch(const std::vector<Volume>& volumes,
                                      const std::vector<LabelMap>& labelmaps, std::size_t n,
                                      SamplingMode mode, std::uint64_t seed,
                                      const SampleOptions& opt, const LandmarkGrid* grid = nullptr,
                                      const ProbAtlas* atlas = nullptr);

} // namespace patchseg
