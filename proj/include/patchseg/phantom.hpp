#pragma once

#include <cstdint>
#include <utility>

#include "patchseg/volume.hpp"

namespace patchseg {

// Synthetic volume + label map generator. The geometry is a chain of nested
// axis-aligned ellipsoids around an off-center cluster point, plus (when
// ambiguous_pair is set) two spheres mirrored across the axial mid-plane that
// share one intensity distribution but carry the two highest labels. All
// non-pair structures are exactly symmetric under the z reflection, so the
// axial 2D appearance of the two pair classes is identically distributed and
// only spatial features can separate them.
struct PhantomSpec {
    Dims dims{64, 64, 64};
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::uint16_t num_classes = 8; // >= 4: background + at least 3 structures
    std::uint64_t seed = 0;
    double noise_sigma = 0.08; // >= 0; background stays exactly zero
    bool ambiguous_pair = true;
};

// Deterministic in spec.seed. Background intensity is exactly 0 (no noise),
// structure intensities are per-class means spaced at least 3*noise_sigma
// apart (the ambiguous pair shares one mean) plus Gaussian noise.
std::pair<Volume, LabelMap> generate_phantom(const PhantomSpec& spec);

} // namespace patchseg
