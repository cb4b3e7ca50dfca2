#pragma once

#include <array>
#include <cmath>
#include <string>

#include "scope/common.hpp"

namespace scope::geo {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
    std::array<double, 3> v{};
    double& operator[](size_t i) { return v[i]; }
    double operator[](size_t i) const { return v[i]; }
};

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& v) { return {s * v[0], s * v[1], s * v[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(norm2(v)); }
inline Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    return n > 0 ? (1.0 / n) * v : Vec3{0, 0, 0};
}

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
        return r;
    }
    static Mat3 zero() { return Mat3{}; }

    double& operator()(int i, int j) { return m[static_cast<size_t>(i) * 3 + j]; }
    double operator()(int i, int j) const { return m[static_cast<size_t>(i) * 3 + j]; }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
                m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
                m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * o(k, j);
                r(i, j) = acc;
            }
        return r;
    }

    Mat3 operator+(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
        return r;
    }

    Mat3 scaled(double s) const {
        Mat3 r;
        for (int i = 0; i < 9; ++i) r.m[i] = s * m[i];
        return r;
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    double trace() const { return m[0] + m[4] + m[8]; }

    static Mat3 outer(const Vec3& a, const Vec3& b) {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = a[i] * b[j];
        return r;
    }
};

inline Mat3 axis_angle(const Vec3& axis_in, double angle_rad) {
    const Vec3 a = normalized(axis_in);
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    Mat3 k = Mat3::zero();
    k(0, 1) = -a[2]; k(0, 2) = a[1];
    k(1, 0) = a[2];  k(1, 2) = -a[0];
    k(2, 0) = -a[1]; k(2, 1) = a[0];
    Mat3 r = Mat3::identity().scaled(c) + k.scaled(s) + Mat3::outer(a, a).scaled(1.0 - c);
    return r;
}

// Uniform random rotation via Shoemake's quaternion method.
inline Mat3 random_rotation(Rng& rng) {
    const double u1 = rng.uniform(), u2 = rng.uniform(), u3 = rng.uniform();
    const double q0 = std::sqrt(1 - u1) * std::sin(2 * kPi * u2);
    const double q1 = std::sqrt(1 - u1) * std::cos(2 * kPi * u2);
    const double q2 = std::sqrt(u1) * std::sin(2 * kPi * u3);
    const double q3 = std::sqrt(u1) * std::cos(2 * kPi * u3);
    Mat3 r;
    r(0, 0) = 1 - 2 * (q2 * q2 + q3 * q3);
    r(0, 1) = 2 * (q1 * q2 - q0 * q3);
    r(0, 2) = 2 * (q1 * q3 + q0 * q2);
    r(1, 0) = 2 * (q1 * q2 + q0 * q3);
    r(1, 1) = 1 - 2 * (q1 * q1 + q3 * q3);
    r(1, 2) = 2 * (q2 * q3 - q0 * q1);
    r(2, 0) = 2 * (q1 * q3 - q0 * q2);
    r(2, 1) = 2 * (q2 * q3 + q0 * q1);
    r(2, 2) = 1 - 2 * (q1 * q1 + q2 * q2);
    return r;
}

inline double orthogonality_defect(const Mat3& r) {
    const Mat3 g = r.transposed() * r;
    double worst = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    return worst;
}

// Geodesic rotation angle in radians. The atan2 form keeps full precision
// near zero, where the arccos-of-trace formulation saturates around 1e-8.
inline double rotation_angle(const Mat3& r) {
    const Vec3 axial{0.5 * (r(2, 1) - r(1, 2)), 0.5 * (r(0, 2) - r(2, 0)), 0.5 * (r(1, 0) - r(0, 1))};
    const double s = std::clamp(norm(axial), 0.0, 1.0);
    const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::atan2(s, c);
}

// ============================================================================
// Symmetric 3x3 Jacobi eigensolver and SVD
// ============================================================================

// Eigen-decomposition of a symmetric matrix: A = V diag(w) V^T, eigenvalues
// descending. Jacobi sweeps to machine precision.
inline void eigen_symmetric3(const Mat3& a_in, std::array<double, 3>& w, Mat3& v) {
    Mat3 a = a_in;
    v = Mat3::identity();
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = std::abs(a(0, 1)) + std::abs(a(0, 2)) + std::abs(a(1, 2));
        if (off == 0.0) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                Mat3 rot = Mat3::identity();
                rot(p, p) = c; rot(q, q) = c;
                rot(p, q) = s; rot(q, p) = -s;
                a = rot.transposed() * a * rot;
                a(p, q) = a(q, p) = 0.0;  // symmetrize against roundoff
                v = v * rot;
            }
        }
    }
    std::array<int, 3> idx{0, 1, 2};
    std::array<double, 3> diag{a(0, 0), a(1, 1), a(2, 2)};
    std::sort(idx.begin(), idx.end(), [&](int i, int j) { return diag[i] > diag[j]; });
    Mat3 vs;
    for (int k = 0; k < 3; ++k) {
        w[static_cast<size_t>(k)] = diag[static_cast<size_t>(idx[static_cast<size_t>(k)])];
        for (int i = 0; i < 3; ++i) vs(i, k) = v(i, idx[static_cast<size_t>(k)]);
    }
    v = vs;
}

struct Svd3 {
    Mat3 u;
    std::array<double, 3> s{};  // descending
    Mat3 v;
};

// SVD of a general 3x3 matrix via the symmetric eigenproblem of A^T A.
inline Svd3 svd3(const Mat3& a) {
    Svd3 out;
    eigen_symmetric3(a.transposed() * a, out.s, out.v);
    for (auto& s : out.s) s = std::sqrt(std::max(0.0, s));
    const double smax = out.s[0] > 0 ? out.s[0] : 1.0;
    std::array<Vec3, 3> ucols;
    int filled = 0;
    for (int k = 0; k < 3; ++k) {
        if (out.s[static_cast<size_t>(k)] > 1e-13 * smax) {
            Vec3 vk{out.v(0, k), out.v(1, k), out.v(2, k)};
            ucols[static_cast<size_t>(k)] = (1.0 / out.s[static_cast<size_t>(k)]) * (a * vk);
            filled = k + 1;
        }
    }
    if (filled < 3) {
        if (filled == 0) {
            ucols[0] = {1, 0, 0};
            filled = 1;
        }
        if (filled == 1) {
            // any unit vector orthogonal to u0
            Vec3 u0 = ucols[0];
            Vec3 other = std::abs(u0[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
            ucols[1] = normalized(cross(u0, other));
            filled = 2;
        }
        if (filled == 2) ucols[2] = normalized(cross(ucols[0], ucols[1]));
    }
    for (int k = 0; k < 3; ++k)
        for (int i = 0; i < 3; ++i) out.u(i, k) = ucols[static_cast<size_t>(k)][static_cast<size_t>(i)];
    return out;
}

// Nearest rotation matrix (polar factor with determinant correction).
inline Mat3 orthonormalized(const Mat3& a) {
    const Svd3 f = svd3(a);
    Mat3 s = Mat3::identity();
    if ((f.u * f.v.transposed()).det() < 0) s(2, 2) = -1;
    return f.u * s * f.v.transposed();
}

// ============================================================================
// Similarity transform
// ============================================================================

struct PoseSim3 {
    Mat3 rotation = Mat3::identity();
    Vec3 translation{0, 0, 0};
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }

    void validate(double tol = 1e-9) const {
        if (!(scale > 0)) throw DomainError("pose: scale must be positive, got " + std::to_string(scale));
        if (orthogonality_defect(rotation) > tol)
            throw DomainError("pose: rotation is not orthonormal within tolerance");
        if (std::abs(rotation.det() - 1.0) > tol)
            throw DomainError("pose: rotation determinant deviates from 1");
    }
};

// Relative rotation angle between two rotations, in degrees.
inline double rotation_angle_deg_between(const Mat3& a, const Mat3& b) {
    return rotation_angle(a.transposed() * b) * 180.0 / kPi;
}

}  // namespace scope::geo
