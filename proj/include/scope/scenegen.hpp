#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "scope/geometry.hpp"

namespace scope::scenegen {

using geo::Mat3;
using geo::PoseSim3;
using geo::Vec3;

// ============================================================================
// Procedural shape catalogue. Four categories spanning the symmetry classes:
// cuboid (none), cylinder and bowl (axial about canonical z), sphere
// (spherical). Canonical frames are tight boxes; canonical coordinates map
// into the unit cube by diagonal normalization.
// ============================================================================

struct ShapeInstance {
    std::string category;
    // cuboid: half extents (x,y,z); cylinder: radius, half-height;
    // sphere: radius; bowl: outer radius, wall thickness
    std::array<double, 3> params{};
    Vec3 box_min{0, 0, 0}, box_max{0, 0, 0};
    std::string symmetry;  // none | axial | spherical

    Vec3 box_center() const { return 0.5 * (box_min + box_max); }
    double nocs_diag() const { return geo::norm(box_max - box_min); }

    // canonical point -> NOCS in [0,1]^3
    Vec3 nocs(const Vec3& p) const {
        const double inv = 1.0 / nocs_diag();
        return Vec3{0.5, 0.5, 0.5} + inv * (p - box_center());
    }
    // canonical point -> centered NOCS in [-0.5, 0.5]^3
    Vec3 centered_nocs(const Vec3& p) const { return nocs(p) - Vec3{0.5, 0.5, 0.5}; }
};

inline const std::vector<std::string>& categories() {
    static const std::vector<std::string> c{"cuboid", "cylinder", "sphere", "bowl"};
    return c;
}

inline ShapeInstance sample_shape(const std::string& category, Rng& rng) {
    ShapeInstance s;
    s.category = category;
    if (category == "cuboid") {
        s.params = {rng.uniform(0.03, 0.10), rng.uniform(0.03, 0.10), rng.uniform(0.03, 0.10)};
        s.box_min = {-s.params[0], -s.params[1], -s.params[2]};
        s.box_max = {s.params[0], s.params[1], s.params[2]};
        s.symmetry = "none";
    } else if (category == "cylinder") {
        s.params = {rng.uniform(0.025, 0.06), rng.uniform(0.04, 0.11), 0.0};
        s.box_min = {-s.params[0], -s.params[0], -s.params[1]};
        s.box_max = {s.params[0], s.params[0], s.params[1]};
        s.symmetry = "axial";
    } else if (category == "sphere") {
        s.params = {rng.uniform(0.03, 0.08), 0.0, 0.0};
        s.box_min = {-s.params[0], -s.params[0], -s.params[0]};
        s.box_max = {s.params[0], s.params[0], s.params[0]};
        s.symmetry = "spherical";
    } else if (category == "bowl") {
        s.params = {rng.uniform(0.05, 0.10), rng.uniform(0.012, 0.020), 0.0};
        s.box_min = {-s.params[0], -s.params[0], -s.params[0]};
        s.box_max = {s.params[0], s.params[0], 0.0};
        s.symmetry = "axial";
    } else {
        throw ConfigError("sample_shape: unknown category '" + category + "'");
    }
    return s;
}

// ----------------------------------------------------------------------------
// Analytic ray casting in the canonical frame. Rays are given unnormalized
// with dir.z == 1 in camera space, so the hit parameter equals camera depth.
// ----------------------------------------------------------------------------

struct SurfaceHit {
    double lambda;  // camera depth
    Vec3 p_obj;     // canonical-frame point
    Vec3 n_obj;     // canonical-frame outward normal
};

namespace detail {

inline std::optional<SurfaceHit> ray_cuboid(const ShapeInstance& s, const Vec3& o, const Vec3& d) {
    const Vec3 h{s.params[0], s.params[1], s.params[2]};
    double t_near = -1e300, t_far = 1e300;
    int near_axis = -1;
    double near_sign = 1;
    for (int a = 0; a < 3; ++a) {
        const double da = d[static_cast<size_t>(a)], oa = o[static_cast<size_t>(a)];
        const double ha = h[static_cast<size_t>(a)];
        if (std::abs(da) < 1e-15) {
            if (std::abs(oa) > ha) return std::nullopt;
            continue;
        }
        double t0 = (-ha - oa) / da, t1 = (ha - oa) / da;
        double sign = -1;
        if (t0 > t1) {
            std::swap(t0, t1);
            sign = 1;
        }
        if (t0 > t_near) {
            t_near = t0;
            near_axis = a;
            near_sign = sign;
        }
        t_far = std::min(t_far, t1);
        if (t_near > t_far) return std::nullopt;
    }
    if (near_axis < 0 || t_near <= 0) return std::nullopt;
    Vec3 n{0, 0, 0};
    n[static_cast<size_t>(near_axis)] = near_sign;
    return SurfaceHit{t_near, o + t_near * d, n};
}

inline std::optional<SurfaceHit> ray_sphere_shell(double radius, const Vec3& o, const Vec3& d,
                                                 double z_max, bool outward) {
    // intersect |p| = radius, keep hits with p.z <= z_max; returns nearest
    const double a = geo::dot(d, d);
    const double b = 2 * geo::dot(o, d);
    const double c = geo::dot(o, o) - radius * radius;
    const double disc = b * b - 4 * a * c;
    if (disc < 0) return std::nullopt;
    const double sq = std::sqrt(disc);
    for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t <= 0) continue;
        const Vec3 p = o + t * d;
        if (p[2] <= z_max + 1e-12) {
            Vec3 n = (1.0 / radius) * p;
            if (!outward) n = -1.0 * n;
            return SurfaceHit{t, p, n};
        }
    }
    return std::nullopt;
}

inline std::optional<SurfaceHit> ray_sphere(const ShapeInstance& s, const Vec3& o, const Vec3& d) {
    return ray_sphere_shell(s.params[0], o, d, 1e300, true);
}

inline std::optional<SurfaceHit> ray_cylinder(const ShapeInstance& s, const Vec3& o, const Vec3& d) {
    const double r = s.params[0], hz = s.params[1];
    std::optional<SurfaceHit> best;
    auto consider = [&](double t, const Vec3& n) {
        if (t <= 0) return;
        if (!best || t < best->lambda) best = SurfaceHit{t, o + t * d, n};
    };
    // lateral surface
    const double a = d[0] * d[0] + d[1] * d[1];
    if (a > 1e-15) {
        const double b = 2 * (o[0] * d[0] + o[1] * d[1]);
        const double c = o[0] * o[0] + o[1] * o[1] - r * r;
        const double disc = b * b - 4 * a * c;
        if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
                if (t <= 0) continue;
                const Vec3 p = o + t * d;
                if (std::abs(p[2]) <= hz) consider(t, geo::normalized(Vec3{p[0], p[1], 0}));
            }
        }
    }
    // caps
    if (std::abs(d[2]) > 1e-15) {
        for (double zcap : {-hz, hz}) {
            const double t = (zcap - o[2]) / d[2];
            if (t <= 0) continue;
            const Vec3 p = o + t * d;
            if (p[0] * p[0] + p[1] * p[1] <= r * r) consider(t, Vec3{0, 0, zcap > 0 ? 1.0 : -1.0});
        }
    }
    return best;
}

inline std::optional<SurfaceHit> ray_bowl(const ShapeInstance& s, const Vec3& o, const Vec3& d) {
    const double ro = s.params[0], ri = ro - s.params[1];
    std::optional<SurfaceHit> best;
    auto consider = [&](const std::optional<SurfaceHit>& h) {
        if (h && (!best || h->lambda < best->lambda)) best = h;
    };
    consider(ray_sphere_shell(ro, o, d, 0.0, true));
    consider(ray_sphere_shell(ri, o, d, 0.0, false));
    // rim annulus at z = 0
    if (std::abs(d[2]) > 1e-15) {
        const double t = -o[2] / d[2];
        if (t > 0) {
            const Vec3 p = o + t * d;
            const double rr = p[0] * p[0] + p[1] * p[1];
            if (rr >= ri * ri && rr <= ro * ro) {
                if (!best || t < best->lambda) best = SurfaceHit{t, p, Vec3{0, 0, 1}};
            }
        }
    }
    return best;
}

}  // namespace detail

inline std::optional<SurfaceHit> ray_cast(const ShapeInstance& s, const Vec3& origin_obj,
                                          const Vec3& dir_obj) {
    if (s.category == "cuboid") return detail::ray_cuboid(s, origin_obj, dir_obj);
    if (s.category == "cylinder") return detail::ray_cylinder(s, origin_obj, dir_obj);
    if (s.category == "sphere") return detail::ray_sphere(s, origin_obj, dir_obj);
    if (s.category == "bowl") return detail::ray_bowl(s, origin_obj, dir_obj);
    throw ConfigError("ray_cast: unknown category '" + s.category + "'");
}

// Deterministic surface sampling in canonical coordinates (model points for
// distance metrics and NOCS-range scans).
inline std::vector<Vec3> surface_points(const ShapeInstance& s, int n, Rng& rng) {
    std::vector<Vec3> pts;
    pts.reserve(static_cast<size_t>(n));
    if (s.category == "cuboid") {
        const Vec3 h{s.params[0], s.params[1], s.params[2]};
        while (static_cast<int>(pts.size()) < n) {
            const int face = static_cast<int>(rng.uniform_index(6));
            const int axis = face / 2;
            const double sign = face % 2 ? 1.0 : -1.0;
            Vec3 p{rng.uniform(-h[0], h[0]), rng.uniform(-h[1], h[1]), rng.uniform(-h[2], h[2])};
            p[static_cast<size_t>(axis)] = sign * h[static_cast<size_t>(axis)];
            pts.push_back(p);
        }
    } else if (s.category == "cylinder") {
        const double r = s.params[0], hz = s.params[1];
        while (static_cast<int>(pts.size()) < n) {
            const double pick = rng.uniform();
            if (pick < 0.6) {
                const double a = rng.uniform(0, 2 * geo::kPi);
                pts.push_back({r * std::cos(a), r * std::sin(a), rng.uniform(-hz, hz)});
            } else {
                const double a = rng.uniform(0, 2 * geo::kPi);
                const double rr = r * std::sqrt(rng.uniform());
                pts.push_back({rr * std::cos(a), rr * std::sin(a), pick < 0.8 ? hz : -hz});
            }
        }
    } else if (s.category == "sphere") {
        const double r = s.params[0];
        while (static_cast<int>(pts.size()) < n) {
            Vec3 p{rng.normal(), rng.normal(), rng.normal()};
            const double len = geo::norm(p);
            if (len < 1e-9) continue;
            pts.push_back((r / len) * p);
        }
    } else if (s.category == "bowl") {
        const double ro = s.params[0], ri = ro - s.params[1];
        while (static_cast<int>(pts.size()) < n) {
            Vec3 p{rng.normal(), rng.normal(), -std::abs(rng.normal())};
            const double len = geo::norm(p);
            if (len < 1e-9) continue;
            const double pick = rng.uniform();
            if (pick < 0.45) pts.push_back((ro / len) * p);
            else if (pick < 0.9) pts.push_back((ri / len) * p);
            else {
                const double a = rng.uniform(0, 2 * geo::kPi);
                const double rr = std::sqrt(rng.uniform(ri * ri, ro * ro));
                pts.push_back({rr * std::cos(a), rr * std::sin(a), 0.0});
            }
        }
    } else {
        throw ConfigError("surface_points: unknown category '" + s.category + "'");
    }
    return pts;
}

// ============================================================================
// Crop rendering
// ============================================================================

struct InputCrop {
    int height = 0, width = 0;
    std::vector<float> rgb;         // HWC3, [0,1], quantized to u8 levels
    std::vector<float> normals;     // HWC3, from depth (model input)
    std::vector<float> gt_normals;  // HWC3, analytic render normals (not serialized)
    std::vector<float> depth;       // HW, meters, 0 where invalid
    std::vector<uint8_t> mask;      // HW
    std::vector<float> nocs;        // HWC3, 0 outside mask
    std::array<double, 9> intrinsics{};
    PoseSim3 gt_pose;  // centered-NOCS -> camera similarity
    double visibility = 1.0;
    std::string category;
    std::string symmetry;
    ShapeInstance shape;
    std::string id;
    int scene_id = 0;

    size_t pixel_count() const { return static_cast<size_t>(height) * width; }
};

struct PlacedObject {
    ShapeInstance shape;
    PoseSim3 pose;           // canonical -> camera (rotation, translation, render scale)
    std::array<float, 3> base_color{0.7f, 0.7f, 0.7f};
};

namespace detail {

inline std::array<float, 3> category_color(const std::string& category, Rng& rng) {
    std::array<float, 3> base;
    if (category == "cuboid") base = {0.82f, 0.35f, 0.30f};
    else if (category == "cylinder") base = {0.30f, 0.62f, 0.82f};
    else if (category == "sphere") base = {0.38f, 0.76f, 0.42f};
    else base = {0.83f, 0.70f, 0.32f};
    for (auto& c : base) c = std::clamp(c + static_cast<float>(rng.uniform(-0.12, 0.12)), 0.05f, 0.95f);
    return base;
}

// Shaded proxy color. The tint follows the canonical frame along the
// non-symmetric axes, the way textured objects pin down their canonical
// coordinates, while axially symmetric categories stay symmetric around
// their axis and spheres stay featureless.
inline std::array<float, 3> shade(const PlacedObject& obj, const SurfaceHit& hit,
                                  const Vec3& normal_cam) {
    static const Vec3 light = geo::normalized(Vec3{0.35, -0.5, -0.79});
    const double lambert = std::max(0.0, geo::dot(normal_cam, light));
    const double level = 0.3 + 0.7 * lambert;
    const Vec3 q = obj.shape.centered_nocs(hit.p_obj);
    // texture term: canonical coordinates blended into the albedo, per axis
    // for cuboids, along the symmetry axis only for cylinders and bowls
    std::array<double, 3> albedo{obj.base_color[0], obj.base_color[1], obj.base_color[2]};
    constexpr double kTint = 0.55;
    if (obj.shape.category == "cuboid") {
        for (int c = 0; c < 3; ++c)
            albedo[static_cast<size_t>(c)] =
                (1.0 - kTint) * albedo[static_cast<size_t>(c)] + kTint * (q[static_cast<size_t>(c)] + 0.5);
    } else if (obj.shape.category == "cylinder" || obj.shape.category == "bowl") {
        const double t = q[2] + 0.5;
        for (int c = 0; c < 3; ++c)
            albedo[static_cast<size_t>(c)] = (1.0 - kTint) * albedo[static_cast<size_t>(c)] + kTint * t;
    }
    std::array<float, 3> out;
    for (int c = 0; c < 3; ++c)
        out[static_cast<size_t>(c)] =
            static_cast<float>(std::clamp(albedo[static_cast<size_t>(c)] * level, 0.0, 1.0));
    return out;
}

inline float quantize_u8(float v) {
    return static_cast<float>(std::clamp(static_cast<int>(std::lround(v * 255.0f)), 0, 255)) / 255.0f;
}

struct ObjectSpaceRay {
    Vec3 origin, dir;
};

inline ObjectSpaceRay to_object_space(const PoseSim3& pose, const Vec3& dir_cam) {
    const Mat3 rt = pose.rotation.transposed();
    const double inv_s = 1.0 / pose.scale;
    return {inv_s * (rt * (-1.0 * pose.translation)), inv_s * (rt * dir_cam)};
}

}  // namespace detail

// Ray-cast render of one target object with optional occluders sharing the
// camera. RGB shows the whole local scene; depth, mask, NOCS and normals are
// object-centric. Analytic normals land in gt_normals; the model-input
// normals field is left empty until computed from depth.
inline InputCrop render_crop(const PlacedObject& target, const std::vector<PlacedObject>& occluders,
                             const std::array<double, 9>& intrinsics, int resolution) {
    if (resolution < 4) throw ConfigError("render: resolution too small");
    if (!(target.pose.scale > 0)) throw RenderError("render: pose scale must be positive");
    {
        // object must sit in front of the camera
        const Vec3 center_cam = target.pose.apply(target.shape.box_center());
        if (center_cam[2] <= 0) throw RenderError("render: object behind camera");
    }
    InputCrop crop;
    crop.height = crop.width = resolution;
    crop.rgb.assign(crop.pixel_count() * 3, 0.0f);
    crop.gt_normals.assign(crop.pixel_count() * 3, 0.0f);
    crop.depth.assign(crop.pixel_count(), 0.0f);
    crop.mask.assign(crop.pixel_count(), 0);
    crop.nocs.assign(crop.pixel_count() * 3, 0.0f);
    crop.intrinsics = intrinsics;
    crop.category = target.shape.category;
    crop.symmetry = target.shape.symmetry;
    crop.shape = target.shape;

    const double fx = intrinsics[0], cx = intrinsics[2], fy = intrinsics[4], cy = intrinsics[5];
    const float background = 0.12f;

    int visible = 0;
    for (int v = 0; v < resolution; ++v) {
        for (int u = 0; u < resolution; ++u) {
            const size_t idx = static_cast<size_t>(v) * resolution + u;
            const Vec3 dir{(u - cx) / fx, (v - cy) / fy, 1.0};

            const auto ray_t = detail::to_object_space(target.pose, dir);
            auto hit_t = ray_cast(target.shape, ray_t.origin, ray_t.dir);

            double occluder_depth = 1e300;
            const PlacedObject* occluder_hit = nullptr;
            SurfaceHit occluder_surface{};
            for (const auto& occ : occluders) {
                const auto ray_o = detail::to_object_space(occ.pose, dir);
                if (auto h = ray_cast(occ.shape, ray_o.origin, ray_o.dir)) {
                    if (h->lambda < occluder_depth) {
                        occluder_depth = h->lambda;
                        occluder_hit = &occ;
                        occluder_surface = *h;
                    }
                }
            }

            float r = background, g = background, b = background;
            if (hit_t && hit_t->lambda < occluder_depth) {
                // target owns the pixel
                crop.mask[idx] = 1;
                crop.depth[idx] = static_cast<float>(hit_t->lambda);
                const Vec3 q = target.shape.nocs(hit_t->p_obj);
                for (int c = 0; c < 3; ++c)
                    crop.nocs[idx * 3 + static_cast<size_t>(c)] = static_cast<float>(q[static_cast<size_t>(c)]);
                Vec3 n_cam = geo::normalized(target.pose.rotation * hit_t->n_obj);
                if (geo::dot(n_cam, dir) > 0) n_cam = -1.0 * n_cam;
                for (int c = 0; c < 3; ++c)
                    crop.gt_normals[idx * 3 + static_cast<size_t>(c)] = static_cast<float>(n_cam[static_cast<size_t>(c)]);
                const auto color = detail::shade(target, *hit_t, n_cam);
                r = color[0];
                g = color[1];
                b = color[2];
                ++visible;
            } else if (occluder_hit) {
                Vec3 n_cam = geo::normalized(occluder_hit->pose.rotation * occluder_surface.n_obj);
                if (geo::dot(n_cam, dir) > 0) n_cam = -1.0 * n_cam;
                const auto color = detail::shade(*occluder_hit, occluder_surface, n_cam);
                r = color[0];
                g = color[1];
                b = color[2];
            }
            crop.rgb[idx * 3 + 0] = detail::quantize_u8(r);
            crop.rgb[idx * 3 + 1] = detail::quantize_u8(g);
            crop.rgb[idx * 3 + 2] = detail::quantize_u8(b);
        }
    }

    // full-object silhouette on an enlarged canvas: counts pixels lost to
    // occlusion and to the crop boundary alike
    int silhouette = 0, silhouette_visible = 0;
    for (int v = -resolution; v < 2 * resolution; ++v) {
        for (int u = -resolution; u < 2 * resolution; ++u) {
            const Vec3 dir{(u - cx) / fx, (v - cy) / fy, 1.0};
            const auto ray_t = detail::to_object_space(target.pose, dir);
            const auto hit = ray_cast(target.shape, ray_t.origin, ray_t.dir);
            if (!hit) continue;
            ++silhouette;
            if (u < 0 || u >= resolution || v < 0 || v >= resolution) continue;
            double occ_depth = 1e300;
            for (const auto& occ : occluders) {
                const auto ray_o = detail::to_object_space(occ.pose, dir);
                if (auto h = ray_cast(occ.shape, ray_o.origin, ray_o.dir))
                    occ_depth = std::min(occ_depth, h->lambda);
            }
            if (hit->lambda < occ_depth) ++silhouette_visible;
        }
    }
    if (silhouette == 0) throw RenderError("render: object silhouette is empty");
    crop.visibility = static_cast<double>(silhouette_visible) / silhouette;
    (void)visible;

    // pose annotation in the registration convention: centered NOCS -> camera
    crop.gt_pose.rotation = target.pose.rotation;
    crop.gt_pose.scale = target.pose.scale * target.shape.nocs_diag();
    crop.gt_pose.translation =
        target.pose.translation + target.pose.scale * (target.pose.rotation * target.shape.box_center());
    return crop;
}

inline InputCrop render(const ShapeInstance& shape, const PoseSim3& pose,
                        const std::array<double, 9>& intrinsics, int resolution) {
    PlacedObject obj;
    obj.shape = shape;
    obj.pose = pose;
    return render_crop(obj, {}, intrinsics, resolution);
}

// ============================================================================
// Normals from depth
// ============================================================================

// Central-difference cross-product normals in the camera frame, oriented
// toward the camera, unit length. Zero where the pixel or any 4-neighbor is
// invalid.
inline std::vector<float> depth_to_normals(const std::vector<float>& depth, int height, int width,
                                           const std::array<double, 9>& intrinsics) {
    std::vector<float> normals(static_cast<size_t>(height) * width * 3, 0.0f);
    const double fx = intrinsics[0], cx = intrinsics[2], fy = intrinsics[4], cy = intrinsics[5];
    auto valid = [&](int u, int v) {
        if (u < 0 || u >= width || v < 0 || v >= height) return false;
        const float z = depth[static_cast<size_t>(v) * width + u];
        return std::isfinite(z) && z > 0.0f;
    };
    auto point = [&](int u, int v) {
        const double z = depth[static_cast<size_t>(v) * width + u];
        return Vec3{(u - cx) / fx * z, (v - cy) / fy * z, z};
    };
    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            if (!valid(u, v) || !valid(u - 1, v) || !valid(u + 1, v) || !valid(u, v - 1) ||
                !valid(u, v + 1))
                continue;
            const Vec3 tx = point(u + 1, v) - point(u - 1, v);
            const Vec3 ty = point(u, v + 1) - point(u, v - 1);
            Vec3 n = geo::cross(ty, tx);
            const double len = geo::norm(n);
            if (len < 1e-12) continue;
            n = (1.0 / len) * n;
            if (geo::dot(n, point(u, v)) > 0) n = -1.0 * n;  // face the camera
            const size_t idx = (static_cast<size_t>(v) * width + u) * 3;
            normals[idx + 0] = static_cast<float>(n[0]);
            normals[idx + 1] = static_cast<float>(n[1]);
            normals[idx + 2] = static_cast<float>(n[2]);
        }
    }
    return normals;
}

// ============================================================================
// Augmentations
// ============================================================================

// Classic gradient-lattice noise: zero at lattice points, values bounded by
// sqrt(2)/2 for unit gradients, quintic fade.
class PerlinField {
public:
    explicit PerlinField(Rng& rng) {
        for (int i = 0; i < 256; ++i) perm_[static_cast<size_t>(i)] = static_cast<uint8_t>(i);
        for (int i = 255; i > 0; --i) {
            const int j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(i) + 1));
            std::swap(perm_[static_cast<size_t>(i)], perm_[static_cast<size_t>(j)]);
        }
    }

    double sample(double x, double y) const {
        const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        const double fx = x - x0, fy = y - y0;
        const double u = fade(fx), v = fade(fy);
        const double n00 = grad_dot(x0, y0, fx, fy);
        const double n10 = grad_dot(x0 + 1, y0, fx - 1, fy);
        const double n01 = grad_dot(x0, y0 + 1, fx, fy - 1);
        const double n11 = grad_dot(x0 + 1, y0 + 1, fx - 1, fy - 1);
        return lerp(lerp(n00, n10, u), lerp(n01, n11, u), v);
    }

private:
    static double fade(double t) { return t * t * t * (t * (t * 6 - 15) + 10); }
    static double lerp(double a, double b, double w) { return a + w * (b - a); }

    double grad_dot(int ix, int iy, double dx, double dy) const {
        const uint8_t h = perm_[(perm_[static_cast<uint8_t>(ix) & 0xff] + iy) & 0xff];
        const double angle = 2.0 * geo::kPi * h / 256.0;
        return dx * std::cos(angle) + dy * std::sin(angle);
    }

    std::array<uint8_t, 256> perm_{};
};

// Adds a Perlin field, scaled by amplitude and sampled at pixel coordinates
// times frequency, to every valid depth pixel. Invalid pixels untouched.
inline std::vector<float> perlin_depth_noise(const std::vector<float>& depth, int height, int width,
                                             double amplitude, double frequency, Rng& rng) {
    if (amplitude < 0) throw ConfigError("perlin_depth_noise: amplitude must be non-negative");
    PerlinField field(rng);
    std::vector<float> out = depth;
    for (int v = 0; v < height; ++v)
        for (int u = 0; u < width; ++u) {
            const size_t idx = static_cast<size_t>(v) * width + u;
            if (!(out[idx] > 0.0f) || !std::isfinite(out[idx])) continue;
            out[idx] += static_cast<float>(amplitude * field.sample(u * frequency, v * frequency));
        }
    return out;
}

// Rectangular dropout with probability 0.5 (side 5% of crop size), then
// pixel dropout of a fraction drawn uniformly from [0, 0.10]. Draw order:
// branch coin, rectangle position (if taken), fraction, pixel selection.
inline std::vector<float> augment_normals(const std::vector<float>& normals, int height, int width,
                                          Rng& rng) {
    std::vector<float> out = normals;
    if (rng.uniform() < 0.5) {
        const int rh = static_cast<int>(std::ceil(0.05 * height));
        const int rw = static_cast<int>(std::ceil(0.05 * width));
        const int top = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(height - rh + 1)));
        const int left = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(width - rw + 1)));
        for (int v = top; v < top + rh; ++v)
            for (int u = left; u < left + rw; ++u)
                for (int c = 0; c < 3; ++c) out[(static_cast<size_t>(v) * width + u) * 3 + c] = 0.0f;
    }
    const double fraction = rng.uniform(0.0, 0.10);
    const size_t n_pixels = static_cast<size_t>(height) * width;
    const size_t n_drop = static_cast<size_t>(std::lround(fraction * n_pixels));
    if (n_drop > 0) {
        std::vector<uint32_t> order(n_pixels);
        for (size_t i = 0; i < n_pixels; ++i) order[i] = static_cast<uint32_t>(i);
        for (size_t i = 0; i < n_drop; ++i) {
            const size_t j = i + rng.uniform_index(n_pixels - i);
            std::swap(order[i], order[j]);
            for (int c = 0; c < 3; ++c) out[static_cast<size_t>(order[i]) * 3 + c] = 0.0f;
        }
    }
    return out;
}

// Crops below 50% visibility are removed; the boundary is inclusive.
inline std::vector<InputCrop> visibility_filter(std::vector<InputCrop> crops) {
    std::vector<InputCrop> kept;
    kept.reserve(crops.size());
    for (auto& crop : crops)
        if (crop.visibility >= 0.5) kept.push_back(std::move(crop));
    return kept;
}

}  // namespace scope::scenegen
