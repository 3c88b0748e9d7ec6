#include "patchseg/phantom.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "patchseg/errors.hpp"
#include "patchseg/rng.hpp"

namespace patchseg {

namespace {

struct Ellipsoid {
    std::array<double, 3> center;
    std::array<double, 3> semi;
    std::uint16_t label;

    bool contains(double x, double y, double z) const {
        const double dx = (x - center[0]) / semi[0];
        const double dy = (y - center[1]) / semi[1];
        const double dz = (z - center[2]) / semi[2];
        return dx * dx + dy * dy + dz * dz <= 1.0;
    }
};

constexpr double kNestedShrink = 0.75;

} // namespace

std::pair<Volume, LabelMap> generate_phantom(const PhantomSpec& spec) {
    if (spec.num_classes < 4)
        throw ValidationError("generate_phantom: num_classes must be at least 4");
    for (auto d : spec.dims)
        if (d < 32) throw ValidationError("generate_phantom: dims must each be at least 32");
    if (spec.noise_sigma < 0.0)
        throw ValidationError("generate_phantom: noise_sigma must be nonnegative");

    const double nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
    const double cz = (nz - 1.0) / 2.0; // mirror plane; kept exact for symmetry
    const int num_nested = spec.ambiguous_pair ? spec.num_classes - 3 : spec.num_classes - 1;

    // The outer ellipsoid scales with the volume; nested levels shrink
    // geometrically. Reject specs whose innermost structure degenerates.
    const std::array<double, 3> outer_semi{0.33 * nx, 0.36 * ny, 0.265 * nz};
    const double innermost = outer_semi[2] * std::pow(kNestedShrink, num_nested - 1);
    if (innermost < 1.0)
        throw ValidationError("generate_phantom: dims too small to fit " +
                              std::to_string(spec.num_classes - 1) + " structures");

    Prng geom(spec.seed, /*stream=*/1);
    const double unit = std::min({nx, ny, nz}) / 64.0;

    // Concentric nested chain: only the outermost placement and size are
    // jittered, so inner shells can never poke through their parents.
    std::vector<Ellipsoid> structures;
    const std::array<double, 3> cluster{0.44 * nx + geom.next_uniform(-1.5, 1.5) * unit,
                                        0.5 * ny + geom.next_uniform(-1.5, 1.5) * unit,
                                        cz}; // no z jitter: keeps the cluster mirror-symmetric
    std::array<double, 3> semi;
    for (int a = 0; a < 3; ++a) semi[a] = outer_semi[a] * geom.next_uniform(0.96, 1.04);
    for (int level = 0; level < num_nested; ++level) {
        structures.push_back({cluster, semi, static_cast<std::uint16_t>(level + 1)});
        for (auto& s : semi) s *= kNestedShrink;
    }

    if (spec.ambiguous_pair) {
        const double radius = 0.117 * std::min(nx, ny) * geom.next_uniform(0.96, 1.04);
        const double px = 0.84 * nx + geom.next_uniform(-1.0, 1.0) * unit;
        const double py = 0.5 * ny + geom.next_uniform(-1.0, 1.0) * unit;
        const double z_off = 0.22 * nz + geom.next_uniform(-1.0, 1.0) * unit;
        const std::array<double, 3> r{radius, radius, radius};
        structures.push_back({{px, py, cz - z_off}, r,
                              static_cast<std::uint16_t>(spec.num_classes - 2)});
        structures.push_back({{px, py, cz + z_off}, r,
                              static_cast<std::uint16_t>(spec.num_classes - 1)});
    }

    LabelMap labels;
    labels.dims = spec.dims;
    labels.spacing = spec.spacing;
    labels.num_classes = spec.num_classes;
    labels.labels.assign(labels.voxels(), 0);
    for (std::uint32_t z = 0; z < spec.dims[2]; ++z)
        for (std::uint32_t y = 0; y < spec.dims[1]; ++y)
            for (std::uint32_t x = 0; x < spec.dims[0]; ++x) {
                std::uint16_t lab = 0;
                for (const auto& e : structures)
                    if (e.contains(x, y, z)) lab = e.label; // later structures overwrite
                labels.labels[labels.index(x, y, z)] = lab;
            }

    // Class mean intensities: spaced >= 3*noise_sigma so every class except the
    // ambiguous pair is separable from intensity alone; the pair shares the
    // mean of the lower pair class.
    const double step = std::max(0.25, 3.0 * spec.noise_sigma);
    std::vector<double> mean(spec.num_classes, 0.0);
    for (int c = 1; c < spec.num_classes; ++c) mean[c] = 0.5 + step * (c - 1);
    if (spec.ambiguous_pair) mean[spec.num_classes - 1] = mean[spec.num_classes - 2];

    Volume vol;
    vol.dims = spec.dims;
    vol.spacing = spec.spacing;
    vol.data.resize(vol.voxels());
    Prng noise(spec.seed, /*stream=*/2);
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        const std::uint16_t lab = labels.labels[i];
        if (lab == 0) {
            vol.data[i] = 0.0f; // exact zero background, used as the inference mask
        } else {
            vol.data[i] = static_cast<float>(mean[lab] + spec.noise_sigma * noise.next_gaussian());
        }
    }
    return {std::move(vol), std::move(labels)};
}

} // namespace patchseg
