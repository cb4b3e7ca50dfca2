#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "scope/geometry.hpp"

namespace scope::metrics {

using geo::Mat3;
using geo::Vec3;

// ============================================================================
// Symmetry handling (shape-only criterion)
// ============================================================================

struct SymmetrySpec {
    enum Kind { None, Axial, Spherical } kind = None;
    Vec3 axis{0, 0, 1};        // object-frame axis for axial symmetry
    bool discrete_box = false; // opt-in cuboid half-turn symmetries

    static SymmetrySpec none() { return {}; }
    static SymmetrySpec axial(const Vec3& axis = {0, 0, 1}) { return {Axial, axis, false}; }
    static SymmetrySpec spherical() { return {Spherical, {0, 0, 1}, false}; }

    bool shape_symmetric() const { return kind != None; }
};

inline SymmetrySpec symmetry_from_tag(const std::string& tag) {
    if (tag == "none") return SymmetrySpec::none();
    if (tag == "axial") return SymmetrySpec::axial();
    if (tag == "spherical") return SymmetrySpec::spherical();
    throw ConfigError("unknown symmetry tag '" + tag + "'");
}

namespace detail {

inline void require_rotation(const Mat3& r, const char* who) {
    if (geo::orthogonality_defect(r) > 1e-6 || std::abs(r.det() - 1.0) > 1e-6)
        throw DomainError(std::string(who) + ": input is not a valid rotation");
}

}  // namespace detail

// Rotation error in degrees under the shape-symmetry criterion. For axial
// symmetry the closed form is the angle between the two mapped symmetry
// axes: the in-plane spin is free, and the minimizing representative aligns
// the axes exactly.
inline double rotation_error_deg(const Mat3& r_pred, const Mat3& r_gt, const SymmetrySpec& sym) {
    detail::require_rotation(r_pred, "rotation_error");
    detail::require_rotation(r_gt, "rotation_error");
    switch (sym.kind) {
        case SymmetrySpec::Spherical:
            return 0.0;
        case SymmetrySpec::Axial: {
            const Vec3 a = geo::normalized(sym.axis);
            const double c = std::clamp(geo::dot(r_pred * a, r_gt * a), -1.0, 1.0);
            return std::acos(c) * 180.0 / geo::kPi;
        }
        case SymmetrySpec::None:
        default: {
            if (!sym.discrete_box) return geo::rotation_angle_deg_between(r_pred, r_gt);
            double best = 1e300;
            for (int axis = -1; axis < 3; ++axis) {
                Mat3 flip = Mat3::identity();
                if (axis >= 0) {
                    Vec3 ax{0, 0, 0};
                    ax[static_cast<size_t>(axis)] = 1.0;
                    flip = geo::axis_angle(ax, geo::kPi);
                }
                best = std::min(best, geo::rotation_angle_deg_between(r_pred, r_gt * flip));
            }
            return best;
        }
    }
}

inline double translation_error(const Vec3& t_pred, const Vec3& t_gt) {
    for (int i = 0; i < 3; ++i)
        if (!std::isfinite(t_pred[static_cast<size_t>(i)]) || !std::isfinite(t_gt[static_cast<size_t>(i)]))
            throw DataError("translation_error: non-finite input");
    return geo::norm(t_pred - t_gt);
}

// ============================================================================
// Oriented 3D IoU via exact convex polytope clipping
// ============================================================================

struct OrientedBox {
    Mat3 rotation = Mat3::identity();
    Vec3 center{0, 0, 0};
    Vec3 extents{1, 1, 1};  // full side lengths

    void validate() const {
        if (!(extents[0] > 0 && extents[1] > 0 && extents[2] > 0))
            throw DomainError("oriented box: extents must be positive");
    }

    double volume() const { return extents[0] * extents[1] * extents[2]; }

    Vec3 corner(int ix, int iy, int iz) const {
        const Vec3 local{(ix ? 0.5 : -0.5) * extents[0], (iy ? 0.5 : -0.5) * extents[1],
                         (iz ? 0.5 : -0.5) * extents[2]};
        return rotation * local + center;
    }
};

namespace detail {

using Polygon = std::vector<Vec3>;

struct HalfSpace {
    Vec3 normal;  // keep points with normal . x <= offset
    double offset;
};

inline std::vector<Polygon> box_faces(const OrientedBox& b) {
    const Vec3 c000 = b.corner(0, 0, 0), c001 = b.corner(0, 0, 1), c010 = b.corner(0, 1, 0),
               c011 = b.corner(0, 1, 1), c100 = b.corner(1, 0, 0), c101 = b.corner(1, 0, 1),
               c110 = b.corner(1, 1, 0), c111 = b.corner(1, 1, 1);
    return {{c000, c001, c011, c010},   // -x
            {c100, c110, c111, c101},   // +x
            {c000, c100, c101, c001},   // -y
            {c010, c011, c111, c110},   // +y
            {c000, c010, c110, c100},   // -z
            {c001, c101, c111, c011}};  // +z
}

inline std::vector<HalfSpace> box_halfspaces(const OrientedBox& b) {
    std::vector<HalfSpace> hs;
    for (int axis = 0; axis < 3; ++axis) {
        Vec3 n{b.rotation(0, axis), b.rotation(1, axis), b.rotation(2, axis)};
        const double half = 0.5 * b.extents[static_cast<size_t>(axis)];
        const double mid = geo::dot(n, b.center);
        hs.push_back({n, mid + half});
        hs.push_back({-1.0 * n, -(mid - half)});
    }
    return hs;
}

// Sutherland-Hodgman clip of a convex polyhedron by one half-space; cut
// points are stitched into a cap face.
inline std::vector<Polygon> clip_polyhedron(const std::vector<Polygon>& faces, const HalfSpace& hs,
                                            double eps) {
    std::vector<Polygon> out;
    Polygon cut_points;
    for (const auto& face : faces) {
        Polygon kept;
        const size_t n = face.size();
        for (size_t i = 0; i < n; ++i) {
            const Vec3& cur = face[i];
            const Vec3& nxt = face[(i + 1) % n];
            const double dc = geo::dot(hs.normal, cur) - hs.offset;
            const double dn = geo::dot(hs.normal, nxt) - hs.offset;
            if (dc <= eps) kept.push_back(cur);
            if ((dc < -eps && dn > eps) || (dc > eps && dn < -eps)) {
                const double t = dc / (dc - dn);
                const Vec3 p = cur + t * (nxt - cur);
                kept.push_back(p);
                cut_points.push_back(p);
            }
        }
        if (kept.size() >= 3) out.push_back(std::move(kept));
    }
    if (cut_points.size() >= 3) {
        // order the cap loop around its centroid within the cut plane
        Vec3 centroid{0, 0, 0};
        for (const auto& p : cut_points) centroid = centroid + p;
        centroid = (1.0 / cut_points.size()) * centroid;
        Vec3 u = std::abs(hs.normal[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
        u = geo::normalized(geo::cross(hs.normal, u));
        const Vec3 v = geo::cross(hs.normal, u);
        std::sort(cut_points.begin(), cut_points.end(), [&](const Vec3& a, const Vec3& b) {
            const Vec3 da = a - centroid, db = b - centroid;
            return std::atan2(geo::dot(da, v), geo::dot(da, u)) <
                   std::atan2(geo::dot(db, v), geo::dot(db, u));
        });
        out.push_back(std::move(cut_points));
    }
    return out;
}

inline double polyhedron_volume(const std::vector<Polygon>& faces) {
    if (faces.empty()) return 0.0;
    Vec3 origin{0, 0, 0};
    size_t count = 0;
    for (const auto& f : faces)
        for (const auto& p : f) {
            origin = origin + p;
            ++count;
        }
    origin = (1.0 / static_cast<double>(count)) * origin;
    // convex body with interior origin: sum of |tet| volumes over face fans
    double vol = 0;
    for (const auto& f : faces) {
        for (size_t i = 1; i + 1 < f.size(); ++i) {
            const Vec3 a = f[0] - origin, b = f[i] - origin, c = f[i + 1] - origin;
            vol += std::abs(geo::dot(a, geo::cross(b, c))) / 6.0;
        }
    }
    return vol;
}

inline double intersection_volume(const OrientedBox& a, const OrientedBox& b) {
    const double scale = std::max({a.extents[0], a.extents[1], a.extents[2], b.extents[0],
                                   b.extents[1], b.extents[2]});
    const double eps = 1e-12 * std::max(scale, 1e-12);
    std::vector<Polygon> poly = box_faces(a);
    for (const auto& hs : box_halfspaces(b)) {
        poly = clip_polyhedron(poly, hs, eps);
        if (poly.empty()) return 0.0;
    }
    return polyhedron_volume(poly);
}

}  // namespace detail

// Volumetric IoU of oriented boxes. With axial symmetry the predicted box is
// spun about its own symmetry axis in 1-degree steps and the best overlap is
// kept.
inline double iou3d(const OrientedBox& box_pred, const OrientedBox& box_gt,
                    const SymmetrySpec& sym = SymmetrySpec::none()) {
    box_pred.validate();
    box_gt.validate();
    const double va = box_pred.volume(), vb = box_gt.volume();
    auto iou_of = [&](const OrientedBox& pred) {
        const double inter = detail::intersection_volume(pred, box_gt);
        return inter / (va + vb - inter);
    };
    if (sym.kind != SymmetrySpec::Axial) return iou_of(box_pred);
    double best = 0.0;
    for (int deg = 0; deg < 360; ++deg) {
        OrientedBox spun = box_pred;
        spun.rotation = box_pred.rotation * geo::axis_angle(sym.axis, deg * geo::kPi / 180.0);
        best = std::max(best, iou_of(spun));
    }
    return best;
}

// ============================================================================
// ADD / ADD-S
// ============================================================================

namespace detail {

// Exact nearest-neighbor distances through a uniform voxel grid with
// expanding-shell search.
class NearestNeighbor {
public:
    explicit NearestNeighbor(const std::vector<Vec3>& points) : pts_(points) {
        Vec3 lo = pts_[0], hi = pts_[0];
        for (const auto& p : pts_)
            for (int c = 0; c < 3; ++c) {
                lo[static_cast<size_t>(c)] = std::min(lo[static_cast<size_t>(c)], p[static_cast<size_t>(c)]);
                hi[static_cast<size_t>(c)] = std::max(hi[static_cast<size_t>(c)], p[static_cast<size_t>(c)]);
            }
        lo_ = lo;
        const double span = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-12});
        const int target = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(pts_.size()))));
        cell_ = span / target;
        for (int c = 0; c < 3; ++c)
            dims_[static_cast<size_t>(c)] =
                std::max(1, static_cast<int>((hi[static_cast<size_t>(c)] - lo[static_cast<size_t>(c)]) / cell_) + 1);
        cells_.resize(static_cast<size_t>(dims_[0]) * dims_[1] * dims_[2]);
        for (size_t i = 0; i < pts_.size(); ++i) cells_[cell_index(pts_[i])].push_back(static_cast<int>(i));
    }

    double distance(const Vec3& q) const {
        double best = std::numeric_limits<double>::infinity();
        const std::array<int, 3> qc = coords(q);
        const int max_ring = dims_[0] + dims_[1] + dims_[2];
        for (int ring = 0; ring <= max_ring; ++ring) {
            if (best < std::numeric_limits<double>::infinity()) {
                // cells in closer rings are exhausted; remaining cells are at
                // least (ring - 1) * cell_ away
                const double bound = (ring - 1) * cell_;
                if (bound > 0 && bound * bound > best) break;
            }
            bool any = false;
            for (int dx = -ring; dx <= ring; ++dx) {
                for (int dy = -ring; dy <= ring; ++dy) {
                    for (int dz = -ring; dz <= ring; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                        const int x = qc[0] + dx, y = qc[1] + dy, z = qc[2] + dz;
                        if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2]) continue;
                        any = true;
                        const auto& bucket =
                            cells_[(static_cast<size_t>(x) * dims_[1] + y) * dims_[2] + z];
                        for (int idx : bucket)
                            best = std::min(best, geo::norm2(pts_[static_cast<size_t>(idx)] - q));
                    }
                }
            }
            if (!any && ring > 0 && best < std::numeric_limits<double>::infinity()) break;
        }
        return std::sqrt(best);
    }

private:
    std::array<int, 3> coords(const Vec3& p) const {
        std::array<int, 3> c;
        for (int i = 0; i < 3; ++i)
            c[static_cast<size_t>(i)] = std::clamp(
                static_cast<int>((p[static_cast<size_t>(i)] - lo_[static_cast<size_t>(i)]) / cell_), 0,
                dims_[static_cast<size_t>(i)] - 1);
        return c;
    }
    size_t cell_index(const Vec3& p) const {
        const auto c = coords(p);
        return (static_cast<size_t>(c[0]) * dims_[1] + c[1]) * dims_[2] + c[2];
    }

    std::vector<Vec3> pts_;
    Vec3 lo_;
    double cell_ = 1.0;
    std::array<int, 3> dims_{1, 1, 1};
    std::vector<std::vector<int>> cells_;
};

}  // namespace detail

struct AddMetrics {
    double add = 0.0;
    double add_s = 0.0;
    double add_sel = 0.0;  // ADD(-S): ADD-S for shape-symmetric objects
    bool pass_add_s = false;
    bool pass_add_sel = false;
};

inline AddMetrics add_metrics(const geo::PoseSim3& pose_pred, const geo::PoseSim3& pose_gt,
                              const std::vector<Vec3>& model_points, const SymmetrySpec& sym,
                              double diameter) {
    if (model_points.empty()) throw DataError("add_metrics: empty model point set");
    if (!(diameter > 0)) throw DomainError("add_metrics: diameter must be positive");
    const size_t n = model_points.size();
    std::vector<Vec3> pred(n), gt(n);
    for (size_t i = 0; i < n; ++i) {
        pred[i] = pose_pred.apply(model_points[i]);
        gt[i] = pose_gt.apply(model_points[i]);
    }
    AddMetrics out;
    for (size_t i = 0; i < n; ++i) out.add += geo::norm(pred[i] - gt[i]);
    out.add /= static_cast<double>(n);

    detail::NearestNeighbor nn(pred);
    for (size_t i = 0; i < n; ++i) out.add_s += nn.distance(gt[i]);
    out.add_s /= static_cast<double>(n);

    out.add_sel = sym.shape_symmetric() ? out.add_s : out.add;
    out.pass_add_s = out.add_s < 0.1 * diameter;
    out.pass_add_sel = out.add_sel < 0.1 * diameter;
    return out;
}

// ============================================================================
// Aggregation
// ============================================================================

struct SampleMetrics {
    std::string category;
    bool failed = false;           // registration or inference failure
    double rot_err_deg = 1e30;     // symmetry-aware
    double rot_err_raw_deg = 1e30; // symmetry-ignorant (diagnostic)
    double trans_err = 1e30;       // meters
    double range = 1.0;            // gt camera distance (scene scale)
    double iou = 0.0;
    double add_s = 1e30;
    double add_sel = 1e30;
    double diameter = 1.0;
    double nocs_seconds = 0.0;
    double registration_seconds = 0.0;
};

struct MetricReport {
    // keyed recall tables, category -> value; "all" holds the category mean
    std::map<std::string, std::map<std::string, double>> recalls;
    std::map<std::string, int> counts;
    int failed = 0;
    double nocs_seconds_mean = 0.0;
    double registration_seconds_mean = 0.0;
    double total_seconds_mean = 0.0;

    double overall(const std::string& metric) const { return recalls.at("all").at(metric); }
};

inline const std::vector<std::pair<std::string, std::pair<double, double>>>& pose_thresholds() {
    // name -> (degrees, meters)
    static const std::vector<std::pair<std::string, std::pair<double, double>>> t{
        {"5d2cm", {5.0, 0.02}},  {"5d5cm", {5.0, 0.05}},   {"10d2cm", {10.0, 0.02}},
        {"10d5cm", {10.0, 0.05}}, {"15d5cm", {15.0, 0.05}},
    };
    return t;
}

inline MetricReport aggregate(const std::vector<SampleMetrics>& samples) {
    if (samples.empty()) throw DataError("aggregate: empty report input");
    std::map<std::string, std::vector<const SampleMetrics*>> by_cat;
    for (const auto& s : samples) by_cat[s.category].push_back(&s);

    MetricReport report;
    std::map<std::string, std::map<std::string, double>>& recalls = report.recalls;
    const std::vector<double> iou_thresholds{0.25, 0.50, 0.75};

    std::map<std::string, double> overall_sum;
    for (const auto& [cat, rows] : by_cat) {
        auto& slot = recalls[cat];
        auto fraction = [&](auto&& pred) {
            int pass = 0;
            for (const auto* s : rows)
                if (!s->failed && pred(*s)) ++pass;
            return static_cast<double>(pass) / static_cast<double>(rows.size());
        };
        for (double th : iou_thresholds) {
            const std::string name = "IoU" + std::to_string(static_cast<int>(th * 100));
            slot[name] = fraction([&](const SampleMetrics& s) { return s.iou > th; });
        }
        for (const auto& [name, th] : pose_thresholds())
            slot[name] = fraction([&](const SampleMetrics& s) {
                return s.rot_err_deg < th.first && s.trans_err < th.second;
            });
        // scene-scaled recall: translation within 5% of the gt range
        slot["10d5pct"] = fraction([&](const SampleMetrics& s) {
            return s.rot_err_deg < 10.0 && s.trans_err < 0.05 * s.range;
        });
        slot["raw10d5pct"] = fraction([&](const SampleMetrics& s) {
            return s.rot_err_raw_deg < 10.0 && s.trans_err < 0.05 * s.range;
        });
        slot["ADD-S"] = fraction([&](const SampleMetrics& s) { return s.add_s < 0.1 * s.diameter; });
        slot["ADD(-S)"] = fraction([&](const SampleMetrics& s) { return s.add_sel < 0.1 * s.diameter; });
        report.counts[cat] = static_cast<int>(rows.size());
        for (const auto& [name, value] : slot) overall_sum[name] += value;
    }
    auto& all = recalls["all"];
    for (const auto& [name, sum] : overall_sum) all[name] = sum / static_cast<double>(by_cat.size());

    int n = 0;
    for (const auto& s : samples) {
        report.failed += s.failed ? 1 : 0;
        report.nocs_seconds_mean += s.nocs_seconds;
        report.registration_seconds_mean += s.registration_seconds;
        ++n;
    }
    report.counts["all"] = n;
    report.nocs_seconds_mean /= n;
    report.registration_seconds_mean /= n;
    report.total_seconds_mean = report.nocs_seconds_mean + report.registration_seconds_mean;
    return report;
}

inline nlohmann::json report_to_json(const MetricReport& report) {
    nlohmann::json j;
    for (const auto& [cat, slot] : report.recalls)
        for (const auto& [name, value] : slot) j["recalls"][cat][name] = value;
    j["counts"] = report.counts;
    j["failed"] = report.failed;
    j["timing"]["nocs_s"] = report.nocs_seconds_mean;
    j["timing"]["registration_s"] = report.registration_seconds_mean;
    j["timing"]["total_s"] = report.total_seconds_mean;
    return j;
}

inline std::string report_to_table(const MetricReport& report) {
    std::vector<std::string> metric_names;
    for (const auto& [name, value] : report.recalls.at("all")) metric_names.push_back(name);
    std::string out = "category        ";
    for (const auto& name : metric_names) {
        out += name;
        out += std::string(name.size() < 9 ? 9 - name.size() : 1, ' ');
    }
    out += "n\n";
    for (const auto& [cat, slot] : report.recalls) {
        std::string row = cat;
        row.resize(16, ' ');
        for (const auto& name : metric_names) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%-9.3f", slot.at(name));
            row += buf;
        }
        row += std::to_string(report.counts.at(cat));
        out += row + "\n";
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "timing mean (s): nocs %.4f  registration %.4f  total %.4f\n",
                  report.nocs_seconds_mean, report.registration_seconds_mean, report.total_seconds_mean);
    out += buf;
    return out;
}

}  // namespace scope::metrics
