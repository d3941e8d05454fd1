#ifndef DNLAB_METRIC_HPP
#define DNLAB_METRIC_HPP

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dnlab/core.hpp"

namespace dnlab {

// ---------------------------------------------------------------------------
// analytic scalar fields (conformal factors, stream potentials)

struct GaussBump {
    double amplitude = 0.0;
    Vec2 center;
    double sigma = 0.2;

    double value(Vec2 p) const;
    Vec2 grad(Vec2 p) const;
    Sym2 hess(Vec2 p) const;
    // third/fourth derivatives: d3[i](j,k) = d_i d_j d_k, d4[i][j](k,l)
    std::array<Sym2, 2> d3(Vec2 p) const;
    std::array<std::array<Sym2, 2>, 2> d4(Vec2 p) const;
};

// c(x) = c0 + c2 r^2 + c4 r^4 + sum of Gaussian bumps; defined on all of R^2
struct ScalarField {
    double c0 = 1.0;
    double c2 = 0.0;
    double c4 = 0.0;
    std::vector<GaussBump> bumps;

    static ScalarField constant(double v) { return ScalarField{v, 0.0, 0.0, {}}; }
    static ScalarField radial(double c0, double c2, double c4 = 0.0) { return ScalarField{c0, c2, c4, {}}; }
    static ScalarField one_bump(double base, double amp, Vec2 center, double sigma) {
        return ScalarField{base, 0.0, 0.0, {GaussBump{amp, center, sigma}}};
    }

    double value(Vec2 p) const;
    Vec2 grad(Vec2 p) const;
    Sym2 hess(Vec2 p) const;
    std::string describe() const;
};

// symmetric 2-tensor perturbation directions h_ij(x)
struct TensorBump {
    // plain: h = coeffs * bump(x); solenoidal: h = rot rot psi with psi = sum of Gaussians
    enum class Kind { Plain, SolenoidalStream };
    Kind kind = Kind::SolenoidalStream;
    Sym2 coeffs = Sym2::identity();   // Plain only
    GaussBump bump;                   // Plain: scalar profile; Solenoidal: the stream potential
    std::vector<GaussBump> stream;    // Solenoidal: sum of stream potentials

    static TensorBump plain(Sym2 coeffs, Vec2 center, double sigma);
    static TensorBump solenoidal(double amp, Vec2 center, double sigma);

    Sym2 value(Vec2 p) const;
    std::array<Sym2, 2> d1(Vec2 p) const;                    // d_k h
    std::array<std::array<Sym2, 2>, 2> d2(Vec2 p) const;     // d_k d_l h
    std::string describe() const;
};

// ---------------------------------------------------------------------------
// diffeomorphisms of the closed disk fixing the boundary

class DiffeoField {
public:
    // psi(x) = x + sum_m a_m * (1-r^2)^p * G_m(x); p >= 1 makes psi|_{dOmega} = Id exactly
    struct Mode {
        Vec2 direction;
        GaussBump profile;  // amplitude folded into the bump
    };

    DiffeoField() = default;
    DiffeoField(std::vector<Mode> modes, int boundary_flatness);

    static DiffeoField identity() { return DiffeoField(); }
    // single interior bump displacement, boundary-fixing
    static DiffeoField bump(Vec2 direction, double amplitude, Vec2 center, double sigma,
                            int boundary_flatness = 1);
    static DiffeoField rotation(double angle);
    // x -> outer(inner(x))
    static DiffeoField compose(DiffeoField outer, DiffeoField inner);

    Vec2 apply(Vec2 p) const;
    Mat2 jacobian(Vec2 p) const;
    bool is_identity() const { return modes_.empty() && rotation_ == 0.0 && !outer_; }
    bool boundary_identity() const;
    double max_boundary_displacement(int samples = 256) const;

private:
    std::vector<Mode> modes_;
    int flatness_ = 1;
    double rotation_ = 0.0;
    std::shared_ptr<const DiffeoField> outer_, inner_;  // set for compositions
};

// ---------------------------------------------------------------------------
// grid-sampled metric data

struct GridMetricData {
    int nx = 0, ny = 0;
    double x0 = -1.2, y0 = -1.2, x1 = 1.2, y1 = 1.2;
    std::vector<Sym2> samples;  // row-major, j*nx+i

    Sym2& at(int i, int j) { return samples[static_cast<std::size_t>(j) * nx + i]; }
    const Sym2& at(int i, int j) const { return samples[static_cast<std::size_t>(j) * nx + i]; }
};

// ---------------------------------------------------------------------------
// metric fields on the closed unit disk (with analytic extension outside)

class MetricField {
public:
    MetricField();  // euclidean

    static MetricField euclidean();
    static MetricField conformal(ScalarField c);                 // g = c^2 * I
    static MetricField perturbed(MetricField base, double eps, TensorBump h);
    static MetricField pullback(DiffeoField psi, MetricField g);
    // glue: equals g within distance w of the boundary, gtilde beyond 2w (Euclidean
    // distance-to-boundary 1-|x|); profile is the fixed quintic plateau cutoff
    static MetricField glued(MetricField g, MetricField gtilde, double width);
    static MetricField from_grid(GridMetricData data);

    // coefficients and derived quantities; p may lie outside the closed disk
    // (analytic families extend; grid fields extend constant-along-normal)
    Sym2 at(Vec2 p) const;
    Sym2 inv_at(Vec2 p) const;
    double det_at(Vec2 p) const;
    std::array<Sym2, 2> d1_at(Vec2 p) const;                     // d1[k] = d_k g
    std::array<std::array<Sym2, 2>, 2> d2_at(Vec2 p) const;      // d2[k][l] = d_k d_l g

    // like at(), but requires p in the closed disk and validates SPD
    Sym2 eval_checked(Vec2 p) const;

    int smoothness() const { return smoothness_; }
    double ck_bound() const { return ck_bound_; }                // a-priori bound A
    void set_ck_bound(double a) { ck_bound_ = a; }
    std::string fingerprint() const { return fingerprint_; }

    // SPD on a dense sample grid (closed disk); throws ValidityError naming the point
    void validate_spd(int n = 128) const;

    // sample onto a grid / text serialization: header "nx ny x0 y0 x1 y1",
    // rows "x y g11 g12 g22"
    GridMetricData sample_grid(int nx, int ny, double pad = 0.2) const;
    void save_text(const std::string& path, int nx = 65, int ny = 65) const;
    static MetricField load_text(const std::string& path);

    struct Impl;  // polymorphic coefficient kernel

private:
    std::shared_ptr<const Impl> impl_;
    int smoothness_ = 10;
    double ck_bound_ = 10.0;
    std::string fingerprint_;

    explicit MetricField(std::shared_ptr<const Impl> impl, int smoothness, std::string fp);
};

// Christoffel symbols Gamma^k_{ij} = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
Christoffel christoffel(const MetricField& g, Vec2 p);

// Gauss curvature via the curvature tensor of the Levi-Civita connection
double gauss_curvature(const MetricField& g, Vec2 p);

// Laplace-Beltrami of an analytic scalar u given value/grad/hess callbacks
double laplace_beltrami(const MetricField& g, Vec2 p, Vec2 grad_u, Sym2 hess_u);

}  // namespace dnlab

#endif
