#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "scope/geometry.hpp"

namespace scope::registration {

using geo::Mat3;
using geo::PoseSim3;
using geo::Vec3;

// ============================================================================
// Correspondences
// ============================================================================

struct CorrespondenceSet {
    std::vector<Vec3> src;  // centered NOCS coordinates, unit-cube frame
    std::vector<Vec3> dst;  // metric camera-frame points from depth

    size_t size() const { return src.size(); }

    void validate() const {
        if (src.size() != dst.size())
            throw ShapeError("correspondences: src/dst length mismatch");
        if (src.size() < 3)
            throw DegenerateInputError("correspondences: need at least 3 pairs, got " +
                                       std::to_string(src.size()));
        for (size_t i = 0; i < src.size(); ++i)
            for (int c = 0; c < 3; ++c)
                if (!std::isfinite(src[i][static_cast<size_t>(c)]) ||
                    !std::isfinite(dst[i][static_cast<size_t>(c)]))
                    throw DataError("correspondences: non-finite entry at index " + std::to_string(i));
    }
};

struct RobustParams {
    double noise_bound = 0.02;
    int max_rotation_iters = 1000;
    double rotation_cost_threshold = 1e-12;
    double gnc_factor = 1.4;      // continuation multiplier
    int pair_degree = 8;          // k-regular pair sampling; 0 = all pairs
    double inlier_gate = 2.0;     // final inlier classification, x noise_bound
    double residual_gate = 3.0;   // breakdown gate on the RMS residual, x noise_bound

    void validate() const {
        if (!(noise_bound > 0)) throw ConfigError("robust params: noise_bound must be positive");
        if (max_rotation_iters < 1) throw ConfigError("robust params: need at least one rotation iteration");
        if (!(rotation_cost_threshold > 0)) throw ConfigError("robust params: cost threshold must be positive");
        if (!(gnc_factor > 1.0)) throw ConfigError("robust params: gnc factor must exceed 1");
    }
};

struct RegistrationResult {
    PoseSim3 pose;
    double rms_residual = 0.0;
    std::vector<int> inliers;
};

// ============================================================================
// Closed-form least-squares similarity (SVD with determinant correction)
// ============================================================================

inline RegistrationResult umeyama(const CorrespondenceSet& corr) {
    corr.validate();
    const size_t n = corr.size();
    Vec3 mu_s{0, 0, 0}, mu_d{0, 0, 0};
    for (size_t i = 0; i < n; ++i) {
        mu_s = mu_s + corr.src[i];
        mu_d = mu_d + corr.dst[i];
    }
    mu_s = (1.0 / n) * mu_s;
    mu_d = (1.0 / n) * mu_d;

    Mat3 cov = Mat3::zero();
    double var_src = 0;
    for (size_t i = 0; i < n; ++i) {
        const Vec3 s = corr.src[i] - mu_s;
        const Vec3 d = corr.dst[i] - mu_d;
        cov = cov + Mat3::outer(d, s);
        var_src += geo::norm2(s);
    }
    cov = cov.scaled(1.0 / n);
    var_src /= n;

    const geo::Svd3 f = geo::svd3(cov);
    // sqrt of the eigensolver's machine-noise floor sits near 1e-8 relative
    if (f.s[1] <= 1e-6 * std::max(f.s[0], 1e-300) || var_src <= 0)
        throw DegenerateInputError("umeyama: rank-deficient covariance (collinear or coincident points)");

    Mat3 sign = Mat3::identity();
    if ((f.u * f.v.transposed()).det() < 0) sign(2, 2) = -1;

    RegistrationResult res;
    res.pose.rotation = geo::orthonormalized(f.u * sign * f.v.transposed());
    res.pose.scale = (f.s[0] * sign(0, 0) + f.s[1] * sign(1, 1) + f.s[2] * sign(2, 2)) / var_src;
    if (!(res.pose.scale > 0))
        throw DegenerateInputError("umeyama: non-positive scale solution");
    res.pose.translation = mu_d - res.pose.scale * (res.pose.rotation * mu_s);

    double sq = 0;
    for (size_t i = 0; i < n; ++i) sq += geo::norm2(corr.dst[i] - res.pose.apply(corr.src[i]));
    res.rms_residual = std::sqrt(sq / n);
    res.inliers.resize(n);
    std::iota(res.inliers.begin(), res.inliers.end(), 0);
    return res;
}

// ============================================================================
// Robust three-stage solver: decoupled scale / rotation / translation
// ============================================================================

namespace detail {

struct Interval {
    double lo, hi;
};

// Adaptive voting: the point covered by the most intervals; ties broken by
// the lowest segment midpoint.
inline double vote_intervals(std::vector<Interval> intervals, int* consensus_out) {
    if (intervals.empty()) throw RobustFailureError("adaptive voting: no measurements");
    std::vector<std::pair<double, int>> events;
    events.reserve(intervals.size() * 2);
    for (const auto& iv : intervals) {
        events.push_back({iv.lo, +1});
        events.push_back({iv.hi, -1});
    }
    std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second > b.second;  // open before close so touching intervals overlap
    });
    int depth = 0, best = 0;
    double best_lo = events.front().first, best_hi = events.front().first;
    for (size_t i = 0; i < events.size(); ++i) {
        depth += events[i].second;
        if (depth > best && i + 1 < events.size()) {
            best = depth;
            best_lo = events[i].first;
            best_hi = events[i + 1].first;
        }
    }
    if (consensus_out) *consensus_out = best;
    return 0.5 * (best_lo + best_hi);
}

// Deterministic approximately k-regular pair graph.
inline std::vector<std::pair<int, int>> pair_graph(int n, int degree) {
    std::vector<std::pair<int, int>> pairs;
    const int64_t all = static_cast<int64_t>(n) * (n - 1) / 2;
    if (degree <= 0 || all <= static_cast<int64_t>(n) * degree / 2) {
        pairs.reserve(static_cast<size_t>(all));
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) pairs.push_back({i, j});
        return pairs;
    }
    Rng rng(derive_seed(0x9a1c5, static_cast<uint64_t>(n), static_cast<uint64_t>(degree)));
    std::vector<uint64_t> seen;
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < degree; ++d) {
            int j = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n - 1)));
            if (j >= i) ++j;
            const int a = std::min(i, j), b = std::max(i, j);
            const uint64_t key = static_cast<uint64_t>(a) * static_cast<uint64_t>(n) + b;
            seen.push_back(key);
        }
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    pairs.reserve(seen.size());
    for (uint64_t key : seen)
        pairs.push_back({static_cast<int>(key / n), static_cast<int>(key % n)});
    return pairs;
}

// Weighted orthogonal Procrustes (Wahba) solve.
inline Mat3 weighted_rotation(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                              const std::vector<double>& w) {
    Mat3 cov = Mat3::zero();
    for (size_t k = 0; k < a.size(); ++k)
        if (w[k] > 0) cov = cov + Mat3::outer(b[k], a[k]).scaled(w[k]);
    const geo::Svd3 f = geo::svd3(cov);
    Mat3 sign = Mat3::identity();
    if ((f.u * f.v.transposed()).det() < 0) sign(2, 2) = -1;
    return geo::orthonormalized(f.u * sign * f.v.transposed());
}

}  // namespace detail

inline RegistrationResult robust_register(const CorrespondenceSet& corr, const RobustParams& params) {
    corr.validate();
    params.validate();
    const int n = static_cast<int>(corr.size());
    const double beta = params.noise_bound;

    const auto pairs = detail::pair_graph(n, params.pair_degree);

    // ---- stage 1: scale via adaptive voting on pairwise distance ratios ----
    std::vector<detail::Interval> scale_votes;
    std::vector<Vec3> pair_src, pair_dst;
    scale_votes.reserve(pairs.size());
    pair_src.reserve(pairs.size());
    pair_dst.reserve(pairs.size());
    for (const auto& [i, j] : pairs) {
        const Vec3 a = corr.src[static_cast<size_t>(i)] - corr.src[static_cast<size_t>(j)];
        const Vec3 b = corr.dst[static_cast<size_t>(i)] - corr.dst[static_cast<size_t>(j)];
        const double da = geo::norm(a);
        if (da < 1e-9) continue;
        const double db = geo::norm(b);
        scale_votes.push_back({std::max((db - 2 * beta) / da, 1e-12), (db + 2 * beta) / da});
        pair_src.push_back(a);
        pair_dst.push_back(b);
    }
    if (scale_votes.empty())
        throw RobustFailureError("robust_register: no usable pairs for scale voting");
    int scale_consensus = 0;
    const double s_hat = detail::vote_intervals(scale_votes, &scale_consensus);
    if (scale_consensus < 1)
        throw RobustFailureError("robust_register: empty scale consensus (all measurements inconsistent)");

    // ---- stage 2: rotation via GNC-TLS on scale-compensated pair vectors ----
    const size_t m = pair_src.size();
    std::vector<Vec3> scaled_src(m);
    for (size_t k = 0; k < m; ++k) scaled_src[k] = s_hat * pair_src[k];
    const double cbar2 = (2 * beta) * (2 * beta);
    std::vector<double> weights(m, 1.0);
    Mat3 rot = detail::weighted_rotation(scaled_src, pair_dst, weights);

    std::vector<double> res2(m);
    double rmax2 = 0;
    auto compute_residuals = [&](const Mat3& r) {
        double mx = 0;
        for (size_t k = 0; k < m; ++k) {
            res2[k] = geo::norm2(pair_dst[k] - r * scaled_src[k]);
            mx = std::max(mx, res2[k]);
        }
        return mx;
    };
    rmax2 = compute_residuals(rot);
    double mu = rmax2 > cbar2 ? cbar2 / (2 * rmax2 - cbar2) : 1e12;
    mu = std::max(mu, 1e-6);
    double prev_cost = std::numeric_limits<double>::infinity();
    for (int it = 0; it < params.max_rotation_iters; ++it) {
        // TLS weight update under the current surrogate
        const double hi = (mu + 1.0) / mu * cbar2;
        const double lo = mu / (mu + 1.0) * cbar2;
        for (size_t k = 0; k < m; ++k) {
            if (res2[k] >= hi) weights[k] = 0.0;
            else if (res2[k] <= lo) weights[k] = 1.0;
            else weights[k] = std::sqrt(cbar2 * mu * (mu + 1.0) / res2[k]) - mu;
        }
        rot = detail::weighted_rotation(scaled_src, pair_dst, weights);
        compute_residuals(rot);
        // weighted surrogate cost: keeps moving while the continuation
        // anneals, settles only once weights binarize and the fit is stable
        double cost = 0;
        for (size_t k = 0; k < m; ++k) cost += weights[k] * res2[k];
        if (std::abs(cost - prev_cost) < params.rotation_cost_threshold) break;
        prev_cost = cost;
        mu *= params.gnc_factor;
    }

    // ---- stage 3: translation via component-wise adaptive voting ----
    Vec3 t_hat{0, 0, 0};
    for (int c = 0; c < 3; ++c) {
        std::vector<detail::Interval> votes;
        votes.reserve(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const Vec3 cvec = corr.dst[static_cast<size_t>(i)] -
                              s_hat * (rot * corr.src[static_cast<size_t>(i)]);
            votes.push_back({cvec[static_cast<size_t>(c)] - beta, cvec[static_cast<size_t>(c)] + beta});
        }
        t_hat[static_cast<size_t>(c)] = detail::vote_intervals(votes, nullptr);
    }

    // voting-consistent points seed the final refit
    PoseSim3 vote_pose{rot, t_hat, s_hat};
    std::vector<int> seed;
    for (int i = 0; i < n; ++i) {
        const Vec3 r = corr.dst[static_cast<size_t>(i)] - vote_pose.apply(corr.src[static_cast<size_t>(i)]);
        if (std::abs(r[0]) <= beta && std::abs(r[1]) <= beta && std::abs(r[2]) <= beta)
            seed.push_back(i);
    }
    if (seed.size() < 3)
        throw RobustFailureError("robust_register: voting consensus too small (" +
                                 std::to_string(seed.size()) + " points) - all outliers?");

    auto subset = [&](const std::vector<int>& idx) {
        CorrespondenceSet sub;
        for (int i : idx) {
            sub.src.push_back(corr.src[static_cast<size_t>(i)]);
            sub.dst.push_back(corr.dst[static_cast<size_t>(i)]);
        }
        return sub;
    };

    RegistrationResult fit;
    try {
        fit = umeyama(subset(seed));
    } catch (const DegenerateInputError& e) {
        throw RobustFailureError(std::string("robust_register: degenerate consensus set: ") + e.what());
    }

    // final inlier classification at a gate wide enough for Gaussian tails,
    // then one more polish refit
    std::vector<int> inliers;
    for (int i = 0; i < n; ++i) {
        const double r = geo::norm(corr.dst[static_cast<size_t>(i)] -
                                   fit.pose.apply(corr.src[static_cast<size_t>(i)]));
        if (r <= params.inlier_gate * beta) inliers.push_back(i);
    }
    if (inliers.size() >= 3) {
        try {
            fit = umeyama(subset(inliers));
        } catch (const DegenerateInputError&) {
            inliers = seed;  // keep the seed fit
        }
    } else {
        inliers = seed;
    }

    double sq = 0;
    for (int i : inliers)
        sq += geo::norm2(corr.dst[static_cast<size_t>(i)] - fit.pose.apply(corr.src[static_cast<size_t>(i)]));
    const double rms = std::sqrt(sq / inliers.size());
    if (rms > params.residual_gate * beta)
        throw RobustFailureError("robust_register: residual " + std::to_string(rms) +
                                 " exceeds breakdown gate " + std::to_string(params.residual_gate * beta));

    RegistrationResult out;
    out.pose = fit.pose;
    out.pose.rotation = geo::orthonormalized(out.pose.rotation);
    out.rms_residual = rms;
    out.inliers = std::move(inliers);
    return out;
}

// ============================================================================
// NOCS image -> correspondences -> pose
// ============================================================================

struct NocsDepthView {
    int height = 0, width = 0;
    const float* nocs = nullptr;    // HWC, 3 channels, values in [0,1]
    const float* depth = nullptr;   // meters
    const uint8_t* mask = nullptr;  // nonzero = valid
    std::array<double, 9> intrinsics{};  // row-major 3x3
};

inline Vec3 back_project(const std::array<double, 9>& k, double u, double v, double z) {
    const double fx = k[0], cx = k[2], fy = k[4], cy = k[5];
    return {(u - cx) / fx * z, (v - cy) / fy * z, z};
}

inline CorrespondenceSet sample_correspondences(const NocsDepthView& view, int n_points, Rng& rng) {
    std::vector<int> valid;
    for (int v = 0; v < view.height; ++v) {
        for (int u = 0; u < view.width; ++u) {
            const int idx = v * view.width + u;
            if (!view.mask[idx]) continue;
            const float z = view.depth[idx];
            if (!std::isfinite(z) || z <= 0) continue;
            const float* nc = view.nocs + static_cast<size_t>(idx) * 3;
            if (!std::isfinite(nc[0]) || !std::isfinite(nc[1]) || !std::isfinite(nc[2])) continue;
            valid.push_back(idx);
        }
    }
    if (valid.size() < 3)
        throw DegenerateInputError("sample_correspondences: only " + std::to_string(valid.size()) +
                                   " valid pixels");
    if (n_points < static_cast<int>(valid.size())) {
        // partial Fisher-Yates draw of n_points without replacement
        for (int i = 0; i < n_points; ++i) {
            const size_t j = i + rng.uniform_index(valid.size() - static_cast<size_t>(i));
            std::swap(valid[static_cast<size_t>(i)], valid[j]);
        }
        valid.resize(static_cast<size_t>(n_points));
    }
    CorrespondenceSet corr;
    corr.src.reserve(valid.size());
    corr.dst.reserve(valid.size());
    for (int idx : valid) {
        const int u = idx % view.width, v = idx / view.width;
        const float* nc = view.nocs + static_cast<size_t>(idx) * 3;
        corr.src.push_back({nc[0] - 0.5, nc[1] - 0.5, nc[2] - 0.5});
        corr.dst.push_back(back_project(view.intrinsics, u, v, view.depth[idx]));
    }
    return corr;
}

struct PoseEstimate {
    PoseSim3 pose;
    Vec3 extents{0, 0, 0};  // metric box extents
    RegistrationResult registration;
    double seconds = 0.0;
};

inline PoseEstimate pose_from_nocs(const NocsDepthView& view, int n_points,
                                   const RobustParams& params, Rng& rng) {
    Timer timer;
    CorrespondenceSet corr = sample_correspondences(view, n_points, rng);
    PoseEstimate est;
    est.registration = robust_register(corr, params);
    est.pose = est.registration.pose;
    // NOCS boxes are centered on 0.5 by construction, so the occupied extent
    // is recovered from the largest deviation per axis (either side suffices
    // under partial visibility).
    Vec3 half{0, 0, 0};
    for (int i : est.registration.inliers)
        for (int c = 0; c < 3; ++c)
            half[static_cast<size_t>(c)] = std::max(half[static_cast<size_t>(c)],
                                                    std::abs(corr.src[static_cast<size_t>(i)][static_cast<size_t>(c)]));
    est.extents = 2.0 * est.pose.scale * half;
    est.seconds = timer.seconds();
    return est;
}

}  // namespace scope::registration
