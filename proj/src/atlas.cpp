#include "patchseg/atlas.hpp"

#include <string>

#include "patchseg/errors.hpp"
#include "mrvol_detail.hpp"

namespace patchseg {

ProbAtlas build_atlas(const std::vector<LabelMap>& maps, double eps) {
    if (maps.empty()) throw ValidationError("build_atlas: no label maps");
    if (eps < 0.0) throw ValidationError("build_atlas: eps must be nonnegative");
    const auto& first = maps.front();
    for (const auto& m : maps) {
        if (m.dims != first.dims)
            throw ValidationError("build_atlas: dimension mismatch across label maps");
        if (m.num_classes != first.num_classes)
            throw ValidationError("build_atlas: class count mismatch across label maps");
    }

    ProbAtlas atlas;
    atlas.dims = first.dims;
    atlas.spacing = first.spacing;
    atlas.num_classes = first.num_classes;
    const std::size_t nvox = atlas.voxels();
    atlas.probs.assign(nvox * atlas.num_classes, 0.0f);

    std::vector<std::uint16_t> counts(nvox * atlas.num_classes, 0);
    for (const auto& m : maps)
        for (std::size_t i = 0; i < nvox; ++i)
            ++counts[static_cast<std::size_t>(m.labels[i]) * nvox + i];

    const double denom = static_cast<double>(maps.size()) + atlas.num_classes * eps;
    for (std::size_t c = 0; c < atlas.num_classes; ++c)
        for (std::size_t i = 0; i < nvox; ++i)
            atlas.probs[c * nvox + i] =
                static_cast<float>((counts[c * nvox + i] + eps) / denom);
    return atlas;
}

std::vector<float> query_atlas(const ProbAtlas& atlas, std::int64_t x, std::int64_t y,
                               std::int64_t z) {
    std::vector<float> out(atlas.num_classes);
    if (x < 0 || y < 0 || z < 0 || x >= atlas.dims[0] || y >= atlas.dims[1] ||
        z >= atlas.dims[2]) {
        const float u = 1.0f / static_cast<float>(atlas.num_classes);
        for (auto& v : out) v = u;
        return out;
    }
    const std::size_t nvox = atlas.voxels();
    const std::size_t idx =
        (static_cast<std::size_t>(z) * atlas.dims[1] + y) * atlas.dims[0] + x;
    for (std::size_t c = 0; c < atlas.num_classes; ++c) out[c] = atlas.probs[c * nvox + idx];
    return out;
}

void save_atlas(const std::filesystem::path& path, const ProbAtlas& atlas) {
    if (atlas.num_classes == 0) throw ValidationError("save_atlas: num_classes must be positive");
    if (atlas.probs.size() != atlas.voxels() * atlas.num_classes)
        throw ValidationError("save_atlas: payload length does not match dims");
    std::string out;
    out.reserve(34 + atlas.probs.size() * sizeof(float));
    mrvol::write_header(out,
                        {atlas.dims, atlas.spacing, mrvol::PayloadCode::probabilities,
                         atlas.num_classes});
    out.append(reinterpret_cast<const char*>(atlas.probs.data()),
               atlas.probs.size() * sizeof(float));
    mrvol::write_file(path, out);
}

ProbAtlas load_atlas(const std::filesystem::path& path) {
    mrvol::Reader r(path);
    const auto h = mrvol::read_header(r);
    if (h.code != mrvol::PayloadCode::probabilities)
        throw IoError("payload is not probabilities (code " +
                      std::to_string(static_cast<int>(h.code)) + "): " + r.path());
    if (h.num_classes == 0) throw IoError("invalid header (zero classes): " + r.path());
    ProbAtlas atlas;
    atlas.dims = h.dims;
    atlas.spacing = h.spacing;
    atlas.num_classes = h.num_classes;
    atlas.probs.resize(atlas.voxels() * atlas.num_classes);
    r.take_raw(atlas.probs.data(), atlas.probs.size() * sizeof(float));
    return atlas;
}

} // namespace patchseg
