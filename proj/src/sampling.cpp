#include "patchseg/sampling.hpp"

#include <cmath>
#include <string>

#include "patchseg/errors.hpp"

namespace patchseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct PlaneAxes {
    int u, v, w; // in-plane axes (ascending) and the normal axis
};

PlaneAxes plane_axes(Plane p) {
    switch (p) {
        case Plane::axial: return {0, 1, 2};
        case Plane::coronal: return {0, 2, 1};
        case Plane::sagittal: return {1, 2, 0};
    }
    throw ValidationError("invalid plane");
}

// In-plane sample at integer offsets from the center voxel, zero outside.
float plane_value(const Volume& vol, const PlaneAxes& ax,
                  const std::array<std::uint32_t, 3>& center, std::int64_t du, std::int64_t dv) {
    std::int64_t c[3] = {center[0], center[1], center[2]};
    c[ax.u] += du;
    c[ax.v] += dv;
    return vol.at_padded(c[0], c[1], c[2]);
}

// Bilinear in-plane sample at continuous offsets, zero outside the volume.
float plane_value_bilinear(const Volume& vol, const PlaneAxes& ax,
                           const std::array<std::uint32_t, 3>& center, double du, double dv) {
    const double fu = std::floor(du), fv = std::floor(dv);
    const double au = du - fu, av = dv - fv;
    const auto i0 = static_cast<std::int64_t>(fu);
    const auto j0 = static_cast<std::int64_t>(fv);
    const double v00 = plane_value(vol, ax, center, i0, j0);
    const double v10 = plane_value(vol, ax, center, i0 + 1, j0);
    const double v01 = plane_value(vol, ax, center, i0, j0 + 1);
    const double v11 = plane_value(vol, ax, center, i0 + 1, j0 + 1);
    return static_cast<float>((1.0 - av) * ((1.0 - au) * v00 + au * v10) +
                              av * ((1.0 - au) * v01 + au * v11));
}

// Endpoint-aligned bilinear resample of a square window down to 25x25.
// Target pixel t maps to source coordinate t * (src - 1) / 24, so corners map
// to corners and a linear field stays exactly linear.
Patch2d resample_to_patch(const std::vector<float>& window, int src) {
    Patch2d out;
    const double ratio = static_cast<double>(src - 1) / (kPatchSize - 1);
    for (int tj = 0; tj < kPatchSize; ++tj) {
        const double sv = tj * ratio;
        const int j0 = std::min(static_cast<int>(sv), src - 2);
        const double av = sv - j0;
        for (int ti = 0; ti < kPatchSize; ++ti) {
            const double su = ti * ratio;
            const int i0 = std::min(static_cast<int>(su), src - 2);
            const double au = su - i0;
            const double v00 = window[j0 * src + i0];
            const double v10 = window[j0 * src + i0 + 1];
            const double v01 = window[(j0 + 1) * src + i0];
            const double v11 = window[(j0 + 1) * src + i0 + 1];
            out[tj * kPatchSize + ti] = static_cast<float>(
                (1.0 - av) * ((1.0 - au) * v00 + au * v10) + av * ((1.0 - au) * v01 + au * v11));
        }
    }
    return out;
}

std::vector<float> extract_window(const Volume& vol, const PlaneAxes& ax,
                                  const std::array<std::uint32_t, 3>& center, int size) {
    std::vector<float> win(static_cast<std::size_t>(size) * size);
    const int half = size / 2;
    for (int j = 0; j < size; ++j)
        for (int i = 0; i < size; ++i)
            win[j * size + i] = plane_value(vol, ax, center, i - half, j - half);
    return win;
}

Patch2d central_patch(const std::vector<float>& window, int src) {
    Patch2d out;
    const int off = (src - kPatchSize) / 2;
    for (int j = 0; j < kPatchSize; ++j)
        for (int i = 0; i < kPatchSize; ++i)
            out[j * kPatchSize + i] = window[(j + off) * src + (i + off)];
    return out;
}

std::vector<float> central_window(const std::vector<float>& window, int src, int size) {
    std::vector<float> out(static_cast<std::size_t>(size) * size);
    const int off = (src - size) / 2;
    for (int j = 0; j < size; ++j)
        for (int i = 0; i < size; ++i) out[j * size + i] = window[(j + off) * src + (i + off)];
    return out;
}

void check_center(const Volume& v, const std::array<std::uint32_t, 3>& center, const char* what) {
    for (int a = 0; a < 3; ++a)
        if (center[a] >= v.dims[a])
            throw ValidationError(std::string(what) + ": center outside volume");
}

} // namespace

MultiscalePatches extract_multiscale_2d(const Volume& v,
                                        const std::array<std::uint32_t, 3>& center, Plane plane) {
    check_center(v, center, "extract_multiscale_2d");
    const auto ax = plane_axes(plane);
    MultiscalePatches out;
    {
        const auto w25 = extract_window(v, ax, center, kPatchSize);
        for (std::size_t i = 0; i < out.p25.size(); ++i) out.p25[i] = w25[i];
    }
    out.p51s = resample_to_patch(extract_window(v, ax, center, kMidWindow), kMidWindow);
    out.p71s = resample_to_patch(extract_window(v, ax, center, kLargeWindow), kLargeWindow);
    return out;
}

std::vector<float> extract_patch_3d(const Volume& v, const std::array<std::uint32_t, 3>& center) {
    check_center(v, center, "extract_patch_3d");
    std::vector<float> out(static_cast<std::size_t>(kPatch3d) * kPatch3d * kPatch3d);
    const int half = kPatch3d / 2;
    std::size_t idx = 0;
    for (int k = 0; k < kPatch3d; ++k)
        for (int j = 0; j < kPatch3d; ++j)
            for (int i = 0; i < kPatch3d; ++i)
                out[idx++] = v.at_padded(static_cast<std::int64_t>(center[0]) + i - half,
                                         static_cast<std::int64_t>(center[1]) + j - half,
                                         static_cast<std::int64_t>(center[2]) + k - half);
    return out;
}

MultiscalePatches augment(const Volume& v, const std::array<std::uint32_t, 3>& center, Plane plane,
                          const AugmentParams& params) {
    check_center(v, center, "augment");
    if (params.scale < 0.9 || params.scale > 1.1)
        throw ValidationError("augment: scale outside [0.9, 1.1]");
    if (params.angle_deg < -10.0 || params.angle_deg > 10.0)
        throw ValidationError("augment: angle outside [-10, 10] degrees");

    const auto ax = plane_axes(plane);
    const double theta = params.angle_deg * kPi / 180.0;
    const double cs = std::cos(theta), sn = std::sin(theta);
    const double inv = 1.0 / params.scale;
    const int half = kAugmentWindow / 2;

    // Inverse-map each pixel of the transformed window into the source plane.
    std::vector<float> win(static_cast<std::size_t>(kAugmentWindow) * kAugmentWindow);
    for (int j = 0; j < kAugmentWindow; ++j) {
        const double dv = j - half;
        for (int i = 0; i < kAugmentWindow; ++i) {
            const double du = i - half;
            const double su = (cs * du + sn * dv) * inv;
            const double sv = (-sn * du + cs * dv) * inv;
            win[j * kAugmentWindow + i] = plane_value_bilinear(v, ax, center, su, sv);
        }
    }

    MultiscalePatches out;
    out.p25 = central_patch(win, kAugmentWindow);
    out.p51s = resample_to_patch(central_window(win, kAugmentWindow, kMidWindow), kMidWindow);
    out.p71s = resample_to_patch(central_window(win, kAugmentWindow, kLargeWindow), kLargeWindow);
    return out;
}

AugmentParams random_augment_params(Prng& rng) {
    AugmentParams p;
    p.scale = rng.next_uniform(0.9, 1.1);
    p.angle_deg = rng.next_uniform(-10.0, 10.0);
    return p;
}

std::vector<SampledCenter> sample_centers(const std::vector<LabelMap>& labelmaps, std::size_t n,
                                          SamplingMode mode, std::uint64_t seed) {
    if (labelmaps.empty()) throw ValidationError("sample_centers: no label maps");
    if (n == 0) throw ValidationError("sample_centers: batch size must be positive");
    const std::uint16_t num_classes = labelmaps.front().num_classes;
    for (const auto& m : labelmaps)
        if (m.num_classes != num_classes)
            throw ValidationError("sample_centers: class count mismatch across label maps");

    Prng rng(seed, /*stream=*/1);
    std::vector<SampledCenter> out;
    out.reserve(n);

    if (mode == SamplingMode::natural) {
        std::vector<std::size_t> offsets(labelmaps.size() + 1, 0);
        for (std::size_t i = 0; i < labelmaps.size(); ++i)
            offsets[i + 1] = offsets[i] + labelmaps[i].voxels();
        const std::size_t total = offsets.back();
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t t = rng.next_below(total);
            std::size_t vi = 0;
            while (t >= offsets[vi + 1]) ++vi;
            const auto& m = labelmaps[vi];
            const std::size_t lin = t - offsets[vi];
            const std::uint32_t x = static_cast<std::uint32_t>(lin % m.dims[0]);
            const std::uint32_t y = static_cast<std::uint32_t>((lin / m.dims[0]) % m.dims[1]);
            const std::uint32_t z = static_cast<std::uint32_t>(lin / m.dims[0] / m.dims[1]);
            out.push_back({static_cast<std::uint32_t>(vi), {x, y, z}, m.labels[lin]});
        }
        return out;
    }

    // class_uniform: index every voxel by class once, then draw.
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> by_class(num_classes);
    for (std::uint32_t vi = 0; vi < labelmaps.size(); ++vi) {
        const auto& m = labelmaps[vi];
        for (std::size_t lin = 0; lin < m.labels.size(); ++lin)
            by_class[m.labels[lin]].push_back({vi, static_cast<std::uint32_t>(lin)});
    }
    for (std::uint16_t c = 0; c < num_classes; ++c)
        if (by_class[c].empty())
            throw ValidationError("class-uniform sampling: class " + std::to_string(c) +
                                  " absent from all label maps");
    for (std::size_t s = 0; s < n; ++s) {
        const auto c = static_cast<std::uint16_t>(rng.next_below(num_classes));
        const auto& pick = by_class[c][rng.next_below(by_class[c].size())];
        const auto& m = labelmaps[pick.first];
        const std::size_t lin = pick.second;
        const std::uint32_t x = static_cast<std::uint32_t>(lin % m.dims[0]);
        const std::uint32_t y = static_cast<std::uint32_t>((lin / m.dims[0]) % m.dims[1]);
        const std::uint32_t z = static_cast<std::uint32_t>(lin / m.dims[0] / m.dims[1]);
        out.push_back({pick.first, {x, y, z}, c});
    }
    return out;
}

PatchSample build_sample(const Volume& v, const std::array<std::uint32_t, 3>& center,
                         std::uint16_t target, const SampleOptions& opt, const LandmarkGrid* grid,
                         const ProbAtlas* atlas, Prng* augment_rng) {
    PatchSample s;
    s.center = center;
    s.target = target;
    MultiscalePatches patches;
    if (opt.augmented) {
        if (augment_rng == nullptr)
            throw ValidationError("build_sample: augmentation requires a generator");
        patches = augment(v, center, opt.plane, random_augment_params(*augment_rng));
    } else {
        patches = extract_multiscale_2d(v, center, opt.plane);
    }
    s.p25 = patches.p25;
    s.p51s = patches.p51s;
    s.p71s = patches.p71s;
    if (opt.with_3d) s.p3d = extract_patch_3d(v, center);
    if (opt.with_dist) {
        if (grid == nullptr) throw ValidationError("build_sample: distance input requires a grid");
        const auto d = distance_image(*grid, center[0], center[1], center[2]);
        s.dist.assign(d.begin(), d.end());
    }
    if (opt.with_atlas) {
        if (atlas == nullptr)
            throw ValidationError("build_sample: atlas input requires an atlas");
        s.atlas_prob = query_atlas(*atlas, center[0], center[1], center[2]);
    }
    return s;
}

std::vector<PatchSample> sample_batch(const std::vector<Volume>& volumes,
                                      const std::vector<LabelMap>& labelmaps, std::size_t n,
                                      SamplingMode mode, std::uint64_t seed,
                                      const SampleOptions& opt, const LandmarkGrid* grid,
                                      const ProbAtlas* atlas) {
    if (volumes.empty() || volumes.size() != labelmaps.size())
        throw ValidationError("sample_batch: volumes and label maps must pair up");
    for (std::size_t i = 0; i < volumes.size(); ++i)
        if (volumes[i].dims != labelmaps[i].dims)
            throw ValidationError("sample_batch: volume/label dimension mismatch");

    const auto centers = sample_centers(labelmaps, n, mode, seed);
    Prng augment_rng = Prng(seed, /*stream=*/2);
    std::vector<PatchSample> batch;
    batch.reserve(n);
    for (const auto& c : centers)
        batch.push_back(build_sample(volumes[c.volume_index], c.center, c.target, opt, grid,
                                     atlas, &augment_rng));
    return batch;
}

} // namespace patchseg
