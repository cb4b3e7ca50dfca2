#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "scope/metrics.hpp"

using scope::Rng;
namespace geo = scope::geo;
namespace met = scope::metrics;
using geo::Mat3;
using geo::Vec3;

TEST_CASE("rotation error identities") {
    Rng rng(1);
    const Mat3 r = geo::random_rotation(rng);
    CHECK(met::rotation_error_deg(r, r, met::SymmetrySpec::none()) < 1e-9);

    const Vec3 axis = geo::normalized(Vec3{0.3, -0.8, 0.5});
    const Mat3 r5 = r * geo::axis_angle(axis, 5.0 * geo::kPi / 180.0);
    CHECK(met::rotation_error_deg(r5, r, met::SymmetrySpec::none()) ==
          doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("axially symmetric rotation error ignores spin and counts tilt") {
    Rng rng(2);
    const Mat3 r = geo::random_rotation(rng);
    const Vec3 z{0, 0, 1};
    const Mat3 spun = r * geo::axis_angle(z, geo::kPi / 2);
    CHECK(met::rotation_error_deg(spun, r, met::SymmetrySpec::axial(z)) < 1e-9);

    const Mat3 tilted = r * geo::axis_angle(Vec3{1, 0, 0}, geo::kPi / 2);
    CHECK(met::rotation_error_deg(tilted, r, met::SymmetrySpec::axial(z)) ==
          doctest::Approx(90.0).epsilon(1e-9));
}

TEST_CASE("axial closed form agrees with brute-force minimization over spins") {
    Rng rng(3);
    const Vec3 z{0, 0, 1};
    for (int trial = 0; trial < 10; ++trial) {
        const Mat3 r_gt = geo::random_rotation(rng);
        const Mat3 r_pred = geo::random_rotation(rng);
        const double closed = met::rotation_error_deg(r_pred, r_gt, met::SymmetrySpec::axial(z));
        double brute = 1e300;
        for (int k = 0; k < 3600; ++k) {
            const Mat3 candidate = r_gt * geo::axis_angle(z, k * 0.1 * geo::kPi / 180.0);
            brute = std::min(brute, geo::rotation_angle_deg_between(r_pred, candidate));
        }
        CHECK(std::abs(closed - brute) < 0.1);
    }
}

TEST_CASE("spherical symmetry zeroes the rotation error for any rotation") {
    Rng rng(4);
    for (int i = 0; i < 5; ++i) {
        const Mat3 a = geo::random_rotation(rng), b = geo::random_rotation(rng);
        CHECK(met::rotation_error_deg(a, b, met::SymmetrySpec::spherical()) == 0.0);
    }
}

TEST_CASE("discrete box flag accepts half-turn flips") {
    Rng rng(5);
    const Mat3 r = geo::random_rotation(rng);
    const Mat3 flipped = r * geo::axis_angle(Vec3{0, 0, 1}, geo::kPi);
    met::SymmetrySpec box;
    box.discrete_box = true;
    CHECK(met::rotation_error_deg(flipped, r, met::SymmetrySpec::none()) ==
          doctest::Approx(180.0).epsilon(1e-6));
    CHECK(met::rotation_error_deg(flipped, r, box) < 1e-6);
}

TEST_CASE("invalid rotations are rejected") {
    Mat3 bad = Mat3::identity();
    bad(0, 0) = 2.0;
    CHECK_THROWS_AS(met::rotation_error_deg(bad, Mat3::identity(), met::SymmetrySpec::none()),
                    scope::DomainError);
}

TEST_CASE("translation error") {
    CHECK(met::translation_error({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(met::translation_error({0.03, 0, 0}, {0, 0, 0}) == doctest::Approx(0.03));
    Rng rng(6);
    const Vec3 a{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Vec3 b{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double expect = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                                    (a[2] - b[2]) * (a[2] - b[2]));
    CHECK(met::translation_error(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("iou3d analytic cases") {
    met::OrientedBox a;  // unit cube at origin
    met::OrientedBox b = a;
    CHECK(met::iou3d(a, b) == doctest::Approx(1.0).epsilon(1e-9));

    b.center = {5, 0, 0};
    CHECK(met::iou3d(a, b) == doctest::Approx(0.0));

    b.center = {0.5, 0, 0};
    CHECK(met::iou3d(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));

    met::OrientedBox bad;
    bad.extents = {0, 1, 1};
    CHECK_THROWS_AS(met::iou3d(bad, a), scope::DomainError);
}

TEST_CASE("iou3d matches a Monte-Carlo point-sampling oracle on random pairs") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        met::OrientedBox a, b;
        a.rotation = geo::random_rotation(rng);
        b.rotation = geo::random_rotation(rng);
        a.center = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
        b.center = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
        a.extents = {rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2)};
        b.extents = {rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2)};

        const double analytic = met::iou3d(a, b);

        // oracle: sample uniformly inside box a, count hits inside b
        const int n = 200000;
        int hits = 0;
        const Mat3 binv = b.rotation.transposed();
        for (int i = 0; i < n; ++i) {
            const Vec3 local{rng.uniform(-0.5, 0.5) * a.extents[0],
                             rng.uniform(-0.5, 0.5) * a.extents[1],
                             rng.uniform(-0.5, 0.5) * a.extents[2]};
            const Vec3 world = a.rotation * local + a.center;
            const Vec3 in_b = binv * (world - b.center);
            if (std::abs(in_b[0]) <= 0.5 * b.extents[0] && std::abs(in_b[1]) <= 0.5 * b.extents[1] &&
                std::abs(in_b[2]) <= 0.5 * b.extents[2])
                ++hits;
        }
        const double inter = a.volume() * hits / n;
        const double mc_iou = inter / (a.volume() + b.volume() - inter);
        CHECK(std::abs(analytic - mc_iou) < 0.01);
    }
}

TEST_CASE("iou3d is symmetric in its arguments without symmetry handling") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        met::OrientedBox a, b;
        a.rotation = geo::random_rotation(rng);
        b.rotation = geo::random_rotation(rng);
        a.center = {rng.uniform(-0.3, 0.3), 0, 0};
        b.center = {0, rng.uniform(-0.3, 0.3), 0};
        a.extents = {rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)};
        b.extents = {rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)};
        CHECK(met::iou3d(a, b) == doctest::Approx(met::iou3d(b, a)).epsilon(1e-9));
    }
}

TEST_CASE("axial iou maximization recovers spun boxes") {
    Rng rng(9);
    met::OrientedBox gt;
    gt.rotation = geo::random_rotation(rng);
    gt.extents = {0.4, 0.4, 0.9};
    met::OrientedBox pred = gt;
    pred.rotation = gt.rotation * geo::axis_angle(Vec3{0, 0, 1}, 30.0 * geo::kPi / 180.0);
    const double plain = met::iou3d(pred, gt);
    const double with_sym = met::iou3d(pred, gt, met::SymmetrySpec::axial());
    CHECK(plain < 0.9);
    CHECK(with_sym == doctest::Approx(1.0).epsilon(1e-6));
}

namespace {

std::vector<Vec3> cylinder_cloud(int rings, int spokes, double radius, double half_height) {
    std::vector<Vec3> pts;
    for (int r = 0; r < rings; ++r) {
        const double z = -half_height + 2 * half_height * r / (rings - 1);
        for (int s = 0; s < spokes; ++s) {
            const double a = 2 * geo::kPi * s / spokes;
            pts.push_back({radius * std::cos(a), radius * std::sin(a), z});
        }
    }
    return pts;
}

}  // namespace

TEST_CASE("add metrics identities and rigid shift") {
    Rng rng(10);
    auto pts = cylinder_cloud(8, 32, 0.3, 0.5);
    geo::PoseSim3 gt;
    gt.rotation = geo::random_rotation(rng);
    gt.translation = {0.1, -0.2, 1.0};
    gt.scale = 0.8;

    auto same = met::add_metrics(gt, gt, pts, met::SymmetrySpec::none(), 1.0);
    CHECK(same.add == 0.0);
    CHECK(same.add_s == 0.0);
    CHECK(same.pass_add_sel);

    geo::PoseSim3 shifted = gt;
    shifted.translation = gt.translation + Vec3{0.04, 0, 0};
    auto moved = met::add_metrics(shifted, gt, pts, met::SymmetrySpec::none(), 1.0);
    CHECK(moved.add == doctest::Approx(0.04).epsilon(1e-9));
    CHECK(moved.add_s <= moved.add + 1e-12);
}

TEST_CASE("cylinder spun about its axis: ADD-S forgives, ADD does not") {
    auto pts = cylinder_cloud(8, 64, 0.3, 0.5);
    geo::PoseSim3 gt;
    gt.translation = {0, 0, 1.0};
    geo::PoseSim3 pred = gt;
    // spin by an exact multiple of the angular sampling: point sets coincide
    pred.rotation = geo::axis_angle(Vec3{0, 0, 1}, 2 * geo::kPi * 8 / 64);

    auto m = met::add_metrics(pred, gt, pts, met::SymmetrySpec::axial(), 0.6);
    CHECK(m.add > 0.1);
    CHECK(m.add_s == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.add_sel == m.add_s);  // symmetric shape selects ADD-S
    CHECK(m.pass_add_sel);
}

TEST_CASE("grid nearest-neighbor ADD-S equals the exhaustive oracle") {
    Rng rng(11);
    for (int n : {50, 500, 2000}) {
        std::vector<Vec3> pts;
        for (int i = 0; i < n; ++i)
            pts.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
        geo::PoseSim3 gt, pred;
        gt.rotation = geo::random_rotation(rng);
        pred.rotation = geo::random_rotation(rng);
        pred.translation = {0.01, -0.02, 0.015};

        auto m = met::add_metrics(pred, gt, pts, met::SymmetrySpec::none(), 1.0);

        // exhaustive O(N^2) oracle
        std::vector<Vec3> tp(pts.size()), tg(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) {
            tp[i] = pred.apply(pts[i]);
            tg[i] = gt.apply(pts[i]);
        }
        double oracle = 0;
        for (size_t i = 0; i < pts.size(); ++i) {
            double best = 1e300;
            for (size_t j = 0; j < pts.size(); ++j) best = std::min(best, geo::norm(tg[i] - tp[j]));
            oracle += best;
        }
        oracle /= static_cast<double>(pts.size());
        CHECK(m.add_s == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("add metrics rejects empty point sets") {
    geo::PoseSim3 pose;
    CHECK_THROWS_AS(met::add_metrics(pose, pose, {}, met::SymmetrySpec::none(), 1.0),
                    scope::DataError);
    std::vector<Vec3> one{{0, 0, 0}};
    CHECK_THROWS_AS(met::add_metrics(pose, pose, one, met::SymmetrySpec::none(), 0.0),
                    scope::DomainError);
}

namespace {

met::SampleMetrics perfect_sample(const std::string& cat) {
    met::SampleMetrics s;
    s.category = cat;
    s.rot_err_deg = 0.0;
    s.rot_err_raw_deg = 0.0;
    s.trans_err = 0.0;
    s.iou = 1.0;
    s.add_s = 0.0;
    s.add_sel = 0.0;
    return s;
}

}  // namespace

TEST_CASE("aggregate: perfect predictions give unit recalls") {
    std::vector<met::SampleMetrics> samples{perfect_sample("a"), perfect_sample("b")};
    auto report = met::aggregate(samples);
    for (const auto& [name, value] : report.recalls.at("all")) CHECK(value == 1.0);
    CHECK(report.counts.at("all") == 2);
}

TEST_CASE("aggregate: counting against mixed thresholds") {
    auto good = perfect_sample("a");
    auto mid = perfect_sample("a");
    mid.rot_err_deg = 12.0;  // fails 5 and 10 degrees, passes 15
    mid.trans_err = 0.03;    // fails 2cm, passes 5cm
    auto report = met::aggregate({good, mid});
    CHECK(report.recalls.at("a").at("5d5cm") == doctest::Approx(0.5));
    CHECK(report.recalls.at("a").at("15d5cm") == doctest::Approx(1.0));
    CHECK(report.recalls.at("a").at("5d2cm") == doctest::Approx(0.5));
}

TEST_CASE("aggregate: category mean differs from sample mean on unbalanced input") {
    std::vector<met::SampleMetrics> samples;
    for (int i = 0; i < 3; ++i) samples.push_back(perfect_sample("big"));
    auto bad = perfect_sample("small");
    bad.rot_err_deg = 90.0;
    bad.iou = 0.0;
    samples.push_back(bad);
    auto report = met::aggregate(samples);
    // category mean: (1.0 + 0.0) / 2 = 0.5; a sample mean would be 0.75
    CHECK(report.overall("5d5cm") == doctest::Approx(0.5));
    CHECK(report.recalls.at("big").at("5d5cm") == doctest::Approx(1.0));
    CHECK(report.recalls.at("small").at("5d5cm") == doctest::Approx(0.0));
}

TEST_CASE("aggregate: threshold monotonicity holds on random reports") {
    Rng rng(12);
    std::vector<met::SampleMetrics> samples;
    for (int i = 0; i < 200; ++i) {
        met::SampleMetrics s;
        s.category = i % 2 ? "x" : "y";
        s.rot_err_deg = rng.uniform(0, 30);
        s.rot_err_raw_deg = s.rot_err_deg;
        s.trans_err = rng.uniform(0, 0.08);
        s.iou = rng.uniform(0, 1);
        s.add_s = rng.uniform(0, 0.2);
        s.add_sel = s.add_s;
        samples.push_back(s);
    }
    auto report = met::aggregate(samples);
    for (const auto& [cat, slot] : report.recalls) {
        CHECK(slot.at("15d5cm") >= slot.at("10d5cm"));
        CHECK(slot.at("10d5cm") >= slot.at("5d5cm"));
        CHECK(slot.at("10d2cm") >= slot.at("5d2cm"));
        CHECK(slot.at("5d5cm") >= slot.at("5d2cm"));
        CHECK(slot.at("IoU25") >= slot.at("IoU50"));
        CHECK(slot.at("IoU50") >= slot.at("IoU75"));
    }
}

TEST_CASE("aggregate rejects empty input and counts failures") {
    CHECK_THROWS_AS(met::aggregate({}), scope::DataError);
    auto s = perfect_sample("a");
    s.failed = true;
    auto report = met::aggregate({s});
    CHECK(report.failed == 1);
    CHECK(report.overall("IoU25") == 0.0);  // failed samples never pass
}

TEST_CASE("ADD-S never exceeds ADD (property)") {
    Rng rng(13);
    auto pts = cylinder_cloud(6, 24, 0.25, 0.4);
    for (int trial = 0; trial < 20; ++trial) {
        geo::PoseSim3 gt, pred;
        gt.rotation = geo::random_rotation(rng);
        pred.rotation = geo::random_rotation(rng);
        pred.translation = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
        pred.scale = rng.uniform(0.8, 1.2);
        auto m = met::add_metrics(pred, gt, pts, met::SymmetrySpec::axial(), 0.5);
        CHECK(m.add_s <= m.add + 1e-12);
    }
}
