#include "patchseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "patchseg/errors.hpp"

namespace patchseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_dims(const BinaryMask& x, const BinaryMask& y, const char* what) {
    if (x.dims != y.dims)
        throw ValidationError(std::string(what) + ": mask dimension mismatch");
}

// Membership of the 6-neighborhood boundary of x.
std::vector<std::uint8_t> boundary_flags(const BinaryMask& x) {
    const std::int64_t nx = x.dims[0], ny = x.dims[1], nz = x.dims[2];
    std::vector<std::uint8_t> out(x.in.size(), 0);
    auto inside = [&](std::int64_t X, std::int64_t Y, std::int64_t Z) {
        if (X < 0 || Y < 0 || Z < 0 || X >= nx || Y >= ny || Z >= nz) return false;
        return x.in[(static_cast<std::size_t>(Z) * ny + Y) * nx + X] != 0;
    };
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t X = 0; X < nx; ++X) {
                const std::size_t i = (static_cast<std::size_t>(z) * ny + y) * nx + X;
                if (!x.in[i]) continue;
                if (!inside(X - 1, y, z) || !inside(X + 1, y, z) || !inside(X, y - 1, z) ||
                    !inside(X, y + 1, z) || !inside(X, y, z - 1) || !inside(X, y, z + 1))
                    out[i] = 1;
            }
    return out;
}

// 1D squared-distance min-convolution with sample spacing s:
// out[i] = min_j (f[j] + (s*(i-j))^2), the lower envelope of parabolas.
// Entries with f = +inf contribute no parabola.
void edt_1d(const double* f, double* out, int n, double s, int* v, double* z, double* fcopy) {
    const double s2 = s * s;
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        fcopy[q] = f[q];
        while (k >= 0) {
            const int p = v[k];
            const double inter =
                ((fcopy[q] + s2 * q * q) - (fcopy[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
            if (inter <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
        } else {
            const int p = v[k];
            const double inter =
                ((fcopy[q] + s2 * q * q) - (fcopy[p] + s2 * p * p)) / (2.0 * s2 * (q - p));
            ++k;
            v[k] = q;
            z[k] = inter;
            z[k + 1] = kInf;
        }
    }
    if (k < 0) {
        for (int i = 0; i < n; ++i) out[i] = kInf;
        return;
    }
    int j = 0;
    for (int i = 0; i < n; ++i) {
        while (z[j + 1] < i) ++j;
        const int p = v[j];
        const double d = s * (i - p);
        out[i] = d * d + fcopy[p];
    }
}

// Exact squared Euclidean distance (mm^2) from every voxel to the given point
// set, with anisotropic spacing.
std::vector<double> squared_edt(const std::vector<std::uint8_t>& set, const Dims& dims,
                                const Spacing& spacing) {
    const int nx = dims[0], ny = dims[1], nz = dims[2];
    std::vector<double> d(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) d[i] = set[i] ? 0.0 : kInf;

    const int nmax = std::max({nx, ny, nz});
    std::vector<double> line(nmax), out(nmax), z(nmax + 1), fcopy(nmax);
    std::vector<int> v(nmax);

    // pass along x
    for (int zz = 0; zz < nz; ++zz)
        for (int yy = 0; yy < ny; ++yy) {
            double* row = d.data() + (static_cast<std::size_t>(zz) * ny + yy) * nx;
            edt_1d(row, out.data(), nx, spacing[0], v.data(), z.data(), fcopy.data());
            std::copy(out.begin(), out.begin() + nx, row);
        }
    // pass along y
    for (int zz = 0; zz < nz; ++zz)
        for (int xx = 0; xx < nx; ++xx) {
            for (int yy = 0; yy < ny; ++yy)
                line[yy] = d[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx];
            edt_1d(line.data(), out.data(), ny, spacing[1], v.data(), z.data(), fcopy.data());
            for (int yy = 0; yy < ny; ++yy)
                d[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx] = out[yy];
        }
    // pass along z
    for (int yy = 0; yy < ny; ++yy)
        for (int xx = 0; xx < nx; ++xx) {
            for (int zz = 0; zz < nz; ++zz)
                line[zz] = d[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx];
            edt_1d(line.data(), out.data(), nz, spacing[2], v.data(), z.data(), fcopy.data());
            for (int zz = 0; zz < nz; ++zz)
                d[(static_cast<std::size_t>(zz) * ny + yy) * nx + xx] = out[zz];
        }
    return d;
}

struct SurfaceDistances {
    double hausdorff;
    double msd;
};

SurfaceDistances surface_distances(const BinaryMask& x, const BinaryMask& y, bool full_sets) {
    check_dims(x, y, "surface_distances");
    if (x.empty_mask() || y.empty_mask())
        throw ValidationError("surface_distances: undefined for an empty mask");

    const auto set_x = full_sets ? x.in : boundary_flags(x);
    const auto set_y = full_sets ? y.in : boundary_flags(y);
    const auto dist_to_y = squared_edt(set_y, x.dims, x.spacing);
    const auto dist_to_x = squared_edt(set_x, x.dims, x.spacing);

    double sup_xy = 0.0, sup_yx = 0.0, sum_xy = 0.0, sum_yx = 0.0;
    std::size_t nx_pts = 0, ny_pts = 0;
    for (std::size_t i = 0; i < set_x.size(); ++i) {
        if (set_x[i]) {
            const double dd = std::sqrt(dist_to_y[i]);
            sup_xy = std::max(sup_xy, dd);
            sum_xy += dd;
            ++nx_pts;
        }
        if (set_y[i]) {
            const double dd = std::sqrt(dist_to_x[i]);
            sup_yx = std::max(sup_yx, dd);
            sum_yx += dd;
            ++ny_pts;
        }
    }
    return {std::max(sup_xy, sup_yx),
            0.5 * (sum_xy / static_cast<double>(nx_pts) + sum_yx / static_cast<double>(ny_pts))};
}

} // namespace

BinaryMask class_mask(const LabelMap& m, std::uint16_t cls) {
    BinaryMask out;
    out.dims = m.dims;
    out.spacing = m.spacing;
    out.in.resize(m.labels.size());
    for (std::size_t i = 0; i < m.labels.size(); ++i) out.in[i] = m.labels[i] == cls;
    return out;
}

double dice(const BinaryMask& x, const BinaryMask& y) {
    check_dims(x, y, "dice");
    std::size_t nx = 0, ny = 0, inter = 0;
    for (std::size_t i = 0; i < x.in.size(); ++i) {
        nx += x.in[i] != 0;
        ny += y.in[i] != 0;
        inter += (x.in[i] && y.in[i]);
    }
    if (nx + ny == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(nx + ny);
}

std::vector<std::array<double, 3>> extract_boundary(const BinaryMask& x) {
    if (x.empty_mask()) throw ValidationError("extract_boundary: undefined surface (empty mask)");
    const auto flags = boundary_flags(x);
    std::vector<std::array<double, 3>> pts;
    const std::size_t nx = x.dims[0], ny = x.dims[1];
    for (std::size_t i = 0; i < flags.size(); ++i) {
        if (!flags[i]) continue;
        const double px = static_cast<double>(i % nx) * x.spacing[0];
        const double py = static_cast<double>((i / nx) % ny) * x.spacing[1];
        const double pz = static_cast<double>(i / nx / ny) * x.spacing[2];
        pts.push_back({px, py, pz});
    }
    return pts;
}

double hausdorff(const BinaryMask& x, const BinaryMask& y, bool full_sets) {
    return surface_distances(x, y, full_sets).hausdorff;
}

double msd(const BinaryMask& x, const BinaryMask& y, bool full_sets) {
    return surface_distances(x, y, full_sets).msd;
}

MetricReport evaluate_pair(const LabelMap& pred, const LabelMap& gt, bool full_sets) {
    if (pred.dims != gt.dims) throw ValidationError("evaluate_pair: dimension mismatch");
    if (pred.num_classes != gt.num_classes)
        throw ValidationError("evaluate_pair: class count mismatch");

    MetricReport report;
    double dice_sum = 0.0, h_sum = 0.0, m_sum = 0.0;
    for (std::uint16_t c = 1; c < gt.num_classes; ++c) {
        ClassMetrics cm;
        cm.cls = c;
        const auto mx = class_mask(pred, c);
        const auto my = class_mask(gt, c);
        const bool ex = mx.empty_mask(), ey = my.empty_mask();
        if (ex && ey) {
            cm.dice = 1.0; // defined but excluded from averages
        } else if (ex || ey) {
            cm.dice = 0.0;
            cm.dice_valid = true;
        } else {
            cm.dice = dice(mx, my);
            cm.dice_valid = true;
            const auto sd = surface_distances(mx, my, full_sets);
            cm.hausdorff_mm = sd.hausdorff;
            cm.msd_mm = sd.msd;
            cm.dist_valid = true;
        }
        if (cm.dice_valid) {
            dice_sum += cm.dice;
            ++report.dice_valid_count;
        }
        if (cm.dist_valid) {
            h_sum += cm.hausdorff_mm;
            m_sum += cm.msd_mm;
            ++report.dist_valid_count;
        }
        report.per_class.push_back(cm);
    }
    if (report.dice_valid_count > 0) report.mean_dice = dice_sum / report.dice_valid_count;
    if (report.dist_valid_count > 0) {
        report.mean_hausdorff_mm = h_sum / report.dist_valid_count;
        report.mean_msd_mm = m_sum / report.dist_valid_count;
    }
    return report;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, MetricReport>>& reports) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open file for writing: " + path.string());
    f << "volume_id,class_id,dice,hausdorff_mm,msd_mm,valid\n";
    f.precision(9);
    for (const auto& [id, report] : reports) {
        for (const auto& cm : report.per_class) {
            f << id << ',' << cm.cls << ',' << cm.dice << ',';
            if (cm.dist_valid)
                f << cm.hausdorff_mm << ',' << cm.msd_mm;
            else
                f << "nan,nan";
            f << ',' << (cm.dist_valid ? 1 : 0) << '\n';
        }
        f << id << ",mean," << report.mean_dice << ',' << report.mean_hausdorff_mm << ','
          << report.mean_msd_mm << ',' << report.dist_valid_count << '\n';
    }
    if (!f) throw IoError("write failure: " + path.string());
}

} // namespace patchseg
