#ifndef DNLAB_CORE_HPP
#define DNLAB_CORE_HPP

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnlab {

using cplx = std::complex<double>;
inline constexpr double pi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// errors

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : Error { using Error::Error; };       // input outside the admissible set
struct ValidityError : Error { using Error::Error; };     // constructed object violates an invariant
struct GeometryError : Error { using Error::Error; };     // chart folding, trapping, non-invertible maps
struct CapabilityError : Error { using Error::Error; };   // smoothness budget exceeded
struct ResolutionError : Error { using Error::Error; };   // request below grid resolvability
struct NumericError : Error { using Error::Error; };      // iteration failed to converge
struct ConfigError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };     // mismatched companion objects
struct TransversalityError : Error { using Error::Error; };  // tangential / glancing directions
struct CausticError : Error { using Error::Error; };         // ray tube folds

// ---------------------------------------------------------------------------
// small vectors / matrices

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(Vec2 b) const { return {x + b.x, y + b.y}; }
    Vec2 operator-(Vec2 b) const { return {x - b.x, y - b.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator/(double s) const { return {x / s, y / s}; }
    Vec2& operator+=(Vec2 b) { x += b.x; y += b.y; return *this; }
    Vec2& operator-=(Vec2 b) { x -= b.x; y -= b.y; return *this; }
    Vec2 operator-() const { return {-x, -y}; }
    double operator[](int i) const { return i == 0 ? x : y; }

    double dot(Vec2 b) const { return x * b.x + y * b.y; }
    double norm() const { return std::hypot(x, y); }
    double norm2() const { return x * x + y * y; }
};
inline Vec2 operator*(double s, Vec2 v) { return v * s; }

// symmetric 2x2 matrix (metric coefficients, tensors)
struct Sym2 {
    double xx = 0.0, xy = 0.0, yy = 0.0;

    Sym2() = default;
    Sym2(double a, double b, double c) : xx(a), xy(b), yy(c) {}
    static Sym2 identity() { return {1.0, 0.0, 1.0}; }

    double operator()(int i, int j) const {
        if (i == 0) return j == 0 ? xx : xy;
        return j == 0 ? xy : yy;
    }
    Sym2 operator+(Sym2 b) const { return {xx + b.xx, xy + b.xy, yy + b.yy}; }
    Sym2 operator-(Sym2 b) const { return {xx - b.xx, xy - b.xy, yy - b.yy}; }
    Sym2 operator*(double s) const { return {xx * s, xy * s, yy * s}; }

    double det() const { return xx * yy - xy * xy; }
    Sym2 inverse() const {
        double d = det();
        return {yy / d, -xy / d, xx / d};
    }
    Vec2 apply(Vec2 v) const { return {xx * v.x + xy * v.y, xy * v.x + yy * v.y}; }
    // quadratic form v^T S w
    double quad(Vec2 v, Vec2 w) const { return v.x * (xx * w.x + xy * w.y) + v.y * (xy * w.x + yy * w.y); }
    double quad(Vec2 v) const { return quad(v, v); }
    double min_eig() const {
        double tr = xx + yy;
        double disc = std::sqrt(std::max(0.0, 0.25 * (xx - yy) * (xx - yy) + xy * xy));
        return 0.5 * tr - disc;
    }
    double max_eig() const {
        double tr = xx + yy;
        double disc = std::sqrt(std::max(0.0, 0.25 * (xx - yy) * (xx - yy) + xy * xy));
        return 0.5 * tr + disc;
    }
    double max_abs() const {
        return std::max({std::abs(xx), std::abs(xy), std::abs(yy)});
    }
};
inline Sym2 operator*(double s, Sym2 m) { return m * s; }

// general 2x2 matrix (Jacobians)
struct Mat2 {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;  // [[a,b],[c,d]]

    Mat2() = default;
    Mat2(double a_, double b_, double c_, double d_) : a(a_), b(b_), c(c_), d(d_) {}
    static Mat2 identity() { return {1.0, 0.0, 0.0, 1.0}; }

    double det() const { return a * d - b * c; }
    Mat2 inverse() const {
        double dt = det();
        return {d / dt, -b / dt, -c / dt, a / dt};
    }
    Vec2 apply(Vec2 v) const { return {a * v.x + b * v.y, c * v.x + d * v.y}; }
    Vec2 apply_T(Vec2 v) const { return {a * v.x + c * v.y, b * v.x + d * v.y}; }
    Mat2 mul(Mat2 o) const {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
    }
    // J^T S J for symmetric S
    Sym2 congruent(Sym2 s) const {
        Vec2 c1{a, c}, c2{b, d};
        return {s.quad(c1, c1), s.quad(c1, c2), s.quad(c2, c2)};
    }
};

// Christoffel symbols: gamma[k](i,j) = Gamma^k_{ij}
using Christoffel = std::array<Sym2, 2>;

// ---------------------------------------------------------------------------
// cutoff profiles

// quintic smoothstep: 0 at t<=0, 1 at t>=1, C^2 at the seams
inline double smoothstep5(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}
inline double smoothstep5_d(double t) {
    if (t <= 0.0 || t >= 1.0) return 0.0;
    return t * t * (30.0 + t * (-60.0 + 30.0 * t));
}
inline double smoothstep5_dd(double t) {
    if (t <= 0.0 || t >= 1.0) return 0.0;
    return t * (60.0 + t * (-180.0 + 120.0 * t));
}

// plateau cutoff in a scalar distance: 1 for d <= r_plateau, 0 for d >= r_support
inline double plateau_cutoff(double d, double r_plateau, double r_support) {
    return smoothstep5((r_support - d) / (r_support - r_plateau));
}

// C-infinity step: 0 for t <= 0, 1 for t >= 1, flat to all orders at the seams
inline double smoothstep_inf(double t) {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    double a = std::exp(-1.0 / t);
    double b = std::exp(-1.0 / (1.0 - t));
    return a / (a + b);
}
inline double plateau_cutoff_inf(double d, double r_plateau, double r_support) {
    return smoothstep_inf((r_support - d) / (r_support - r_plateau));
}
// C-infinity bump of unit half-width: 1 on |z| <= 1/2, 0 on |z| >= 1
inline double bump_inf(double z) { return plateau_cutoff_inf(std::abs(z), 0.5, 1.0); }

// symmetric C^2 bump of unit half-width: 1 on |z| <= 1/2, 0 on |z| >= 1
inline double bump1(double z) { return plateau_cutoff(std::abs(z), 0.5, 1.0); }
inline double bump1_d(double z) {
    double s = z < 0.0 ? -1.0 : 1.0;
    return -2.0 * s * smoothstep5_d((1.0 - std::abs(z)) * 2.0);
}
inline double bump1_dd(double z) {
    return 4.0 * smoothstep5_dd((1.0 - std::abs(z)) * 2.0);
}

// ---------------------------------------------------------------------------
// misc utilities

inline double wrap_angle(double a) {  // into (-pi, pi]
    a = std::fmod(a, 2.0 * pi);
    if (a <= -pi) a += 2.0 * pi;
    if (a > pi) a -= 2.0 * pi;
    return a;
}

inline double sq(double v) { return v * v; }

// 4th-order derivative of uniformly sampled data, one-sided at the ends
inline double fd_row_deriv(const double* f, int n, int i, double h) {
    if (i >= 2 && i + 2 < n)
        return (8.0 * (f[i + 1] - f[i - 1]) - (f[i + 2] - f[i - 2])) / (12.0 * h);
    if (i == 0)
        return (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    if (i == 1)
        return (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
    if (i == n - 1)
        return (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] +
                3.0 * f[n - 5]) /
               (12.0 * h);
    return (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) /
           (12.0 * h);
}

// deterministic rng stream: one generator per (seed, purpose) pair
std::uint64_t seed_stream(std::uint64_t seed, const std::string& purpose);

// chunked parallel map over [0, n); fn must write only its own slot
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int jobs = 0);

// least-squares fit of log y = slope * log x + intercept; returns {slope, intercept, r2}
struct PowerFit {
    double exponent = 0.0;
    double log_constant = 0.0;
    double r2 = 0.0;
};
PowerFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace dnlab

#endif
