#include "patchseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "patchseg/errors.hpp"
#include "patchseg/kernels.hpp"
#include "mrvol_detail.hpp"

namespace patchseg {

namespace {

void check_shape(const Dims& dims, const Spacing& spacing, std::size_t payload_len,
                 const char* what) {
    for (auto d : dims)
        if (d == 0) throw ValidationError(std::string(what) + ": zero dimension");
    for (auto s : spacing)
        if (!(s > 0.0f)) throw ValidationError(std::string(what) + ": nonpositive spacing");
    const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    if (payload_len != n)
        throw ValidationError(std::string(what) + ": payload length does not match dims");
}

} // namespace

void save_volume(const std::filesystem::path& path, const Volume& v) {
    check_shape(v.dims, v.spacing, v.data.size(), "save_volume");
    std::string out;
    out.reserve(32 + v.data.size() * sizeof(float));
    mrvol::write_header(out, {v.dims, v.spacing, mrvol::PayloadCode::intensities, 0});
    out.append(reinterpret_cast<const char*>(v.data.data()), v.data.size() * sizeof(float));
    mrvol::write_file(path, out);
}

Volume load_volume(const std::filesystem::path& path) {
    mrvol::Reader r(path);
    const auto h = mrvol::read_header(r);
    if (h.code != mrvol::PayloadCode::intensities)
        throw IoError("payload is not intensities (code " +
                      std::to_string(static_cast<int>(h.code)) + "): " + r.path());
    Volume v;
    v.dims = h.dims;
    v.spacing = h.spacing;
    v.data.resize(static_cast<std::size_t>(h.dims[0]) * h.dims[1] * h.dims[2]);
    r.take_raw(v.data.data(), v.data.size() * sizeof(float));
    for (float x : v.data)
        if (!std::isfinite(x)) throw IoError("non-finite intensity in payload: " + r.path());
    return v;
}

void save_labelmap(const std::filesystem::path& path, const LabelMap& m) {
    check_shape(m.dims, m.spacing, m.labels.size(), "save_labelmap");
    if (m.num_classes == 0) throw ValidationError("save_labelmap: num_classes must be positive");
    std::string out;
    out.reserve(34 + m.labels.size() * sizeof(std::uint16_t));
    mrvol::write_header(out, {m.dims, m.spacing, mrvol::PayloadCode::labels, m.num_classes});
    out.append(reinterpret_cast<const char*>(m.labels.data()),
               m.labels.size() * sizeof(std::uint16_t));
    mrvol::write_file(path, out);
}

LabelMap load_labelmap(const std::filesystem::path& path) {
    mrvol::Reader r(path);
    const auto h = mrvol::read_header(r);
    if (h.code != mrvol::PayloadCode::labels)
        throw IoError("payload is not labels (code " + std::to_string(static_cast<int>(h.code)) +
                      "): " + r.path());
    if (h.num_classes == 0) throw IoError("invalid header (zero classes): " + r.path());
    LabelMap m;
    m.dims = h.dims;
    m.spacing = h.spacing;
    m.num_classes = h.num_classes;
    m.labels.resize(static_cast<std::size_t>(h.dims[0]) * h.dims[1] * h.dims[2]);
    r.take_raw(m.labels.data(), m.labels.size() * sizeof(std::uint16_t));
    for (auto l : m.labels)
        if (l >= m.num_classes)
            throw IoError("label out of declared range: " + r.path());
    return m;
}

NormStats compute_norm_stats(const std::vector<Volume>& training) {
    if (training.empty()) throw ValidationError("compute_norm_stats: no volumes");
    std::size_t total = 0;
    double sum = 0.0;
    const auto& k = kern::f32();
    for (const auto& v : training) {
        sum += k.reduce_sum(v.data.data(), v.data.size());
        total += v.data.size();
    }
    if (total == 0) throw ValidationError("compute_norm_stats: no voxels");
    const double mean = sum / static_cast<double>(total);
    double ssq = 0.0;
    for (const auto& v : training) ssq += k.reduce_sumsq(v.data.data(), v.data.size(), mean);
    const double stddev = std::sqrt(ssq / static_cast<double>(total));
    if (!(stddev > 0.0)) throw ValidationError("degenerate intensity distribution (std = 0)");
    return {mean, stddev};
}

Volume normalize(const Volume& v, const NormStats& s) {
    if (!(s.stddev > 0.0)) throw ValidationError("normalize: invalid NormStats (std <= 0)");
    Volume out;
    out.dims = v.dims;
    out.spacing = v.spacing;
    out.data.resize(v.data.size());
    const float mean = static_cast<float>(s.mean);
    const float inv = static_cast<float>(1.0 / s.stddev);
    for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = (v.data[i] - mean) * inv;
    return out;
}

void write_pgm_slice(const std::filesystem::path& path, const Volume& v, int axis,
                     std::uint32_t slice_index) {
    if (axis < 0 || axis > 2) throw ValidationError("write_pgm_slice: axis must be 0, 1 or 2");
    if (slice_index >= v.dims[axis])
        throw ValidationError("write_pgm_slice: slice index out of range");
    const int u_axis = axis == 0 ? 1 : 0;
    const int v_axis = axis == 2 ? 1 : 2;
    const std::uint32_t w = v.dims[u_axis];
    const std::uint32_t h = v.dims[v_axis];

    const auto [mn_it, mx_it] = std::minmax_element(v.data.begin(), v.data.end());
    const float lo = *mn_it, hi = *mx_it;
    const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;

    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(w) * h);
    std::uint32_t coord[3];
    coord[axis] = slice_index;
    for (std::uint32_t j = 0; j < h; ++j) {
        coord[v_axis] = j;
        for (std::uint32_t i = 0; i < w; ++i) {
            coord[u_axis] = i;
            const float val = v.at(coord[0], coord[1], coord[2]);
            const int px = static_cast<int>(std::lround((val - lo) * scale));
            out.push_back(static_cast<char>(std::clamp(px, 0, 255)));
        }
    }
    mrvol::write_file(path, out);
}

} // namespace patchseg
