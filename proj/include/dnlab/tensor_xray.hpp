#ifndef DNLAB_TENSOR_XRAY_HPP
#define DNLAB_TENSOR_XRAY_HPP

#include <optional>

#include "dnlab/geodesic.hpp"

namespace dnlab {

// symmetric 2-tensor field on the disk: Cartesian grid samples with bilinear
// or bicubic interpolation, or an analytic generator
class SymmetricTensorField {
public:
    SymmetricTensorField() = default;

    static SymmetricTensorField constant(Sym2 value);
    static SymmetricTensorField from_function(const std::function<Sym2(Vec2)>& f, int n = 65,
                                              double pad = 0.15);
    static SymmetricTensorField from_bump(const TensorBump& bump, int n = 65);
    // nodal values on the tensor product grid of grid_1d() (component-major)
    static SymmetricTensorField from_nodal(const std::vector<double>& values, int n,
                                           double pad = 0.15);

    Sym2 at(Vec2 p) const;
    int n() const { return n_; }
    double pad() const { return pad_; }
    const std::vector<double>& nodal() const { return nodal_; }

    // compact support check on the boundary band (optional invariant)
    double boundary_band_max(double band = 0.08) const;

    double l2_norm(const MetricField& g) const;
    SymmetricTensorField operator-(const SymmetricTensorField& o) const;

private:
    int n_ = 0;
    double pad_ = 0.15;
    double h_ = 0.0;
    std::vector<double> nodal_;  // 3 components x n x n, [c * n * n + j * n + i]

    double component(int c, Vec2 p) const;
};

// geodesic ray family: fan beams from boundary sources
struct RayFamily {
    struct Ray {
        double theta_src;
        double launch_angle;  // relative to the inward normal in the g-frame
    };
    std::vector<Ray> rays;

    static RayFamily fan(int n_sources, int n_directions, double cone_halfangle = 1.2);
};

struct XRayData {
    RayFamily family;
    std::vector<double> values;
    double quadrature_step = 0.0;

    void save_csv(const std::string& csv_path, const std::string& sidecar_path,
                  const std::string& metric_fp) const;
};

// I_g f(gamma) = int f_ij gammadot^i gammadot^j dt along a traced geodesic
double xray_transform(const MetricField& g, const SymmetricTensorField& f, const Geodesic& gamma);

// all rays of a family (shared traces reused across tensors when assembling)
XRayData xray_transform(const MetricField& g, const SymmetricTensorField& f,
                        const RayFamily& family, const TraceOptions& opt = {});

// symmetric covariant differential [d^s v]_ij = (nabla_i v_j + nabla_j v_i)/2
// for an analytic vector field with derivatives
SymmetricTensorField symmetric_differential(const MetricField& g,
                                            const std::function<Vec2(Vec2)>& v,
                                            const std::function<Mat2(Vec2)>& dv, int n = 65);

// discrete machinery on the nodal tensor space
class XRayOperator {
public:
    // tensor grid of (3 components x n x n) nodal unknowns, vector grid of
    // interior-node vector fields; quadrature weights from the disk mask
    XRayOperator(const MetricField& g, int n_grid, const RayFamily& family,
                 const TraceOptions& opt = {}, int jobs = 0);

    // dense ray matrix: rows = rays, cols = tensor unknowns
    const std::vector<double>& matrix() const { return mat_; }
    std::size_t n_rays() const { return family_.rays.size(); }
    std::size_t n_unknowns() const { return 3 * static_cast<std::size_t>(n_) * n_; }

    // solenoidal projection: f = f^s + d^s v, v = 0 on the boundary;
    // returns (f^s nodal values, potential v) and the divergence residual
    struct Projection {
        std::vector<double> fs;
        std::vector<double> v;
        double divergence_residual = 0.0;
        int cg_iterations = 0;
    };
    Projection solenoidal_project(const std::vector<double>& f_nodal) const;

    SymmetricTensorField wrap(const std::vector<double>& nodal) const;
    std::vector<double> nodal_of(const SymmetricTensorField& f) const;
    double inner(const std::vector<double>& a, const std::vector<double>& b) const;

    // smallest/largest singular values of I_g restricted to the discrete
    // solenoidal subspace, plus the potential-subspace kernel level
    struct SInjectivityReport {
        double sigma_min = 0.0, sigma_max = 0.0;
        double potential_level = 0.0;  // max |I_g d^s v| singular value over potentials
        int n_solenoidal = 0, n_potential = 0;
        std::vector<double> near_null;  // solenoidal tensor achieving sigma_min
    };
    SInjectivityReport sinjectivity_probe() const;

    // Tikhonov-regularized inversion on the solenoidal subspace; alpha < 0
    // picks the L-curve corner on a 12-point ladder
    struct Inversion {
        std::vector<double> f_nodal;
        double alpha = 0.0;
        int cg_iterations = 0;
    };
    Inversion invert(const std::vector<double>& data, double alpha = -1.0) const;

    int grid_n() const { return n_; }
    const MetricField& metric() const { return g_; }

private:
    MetricField g_;
    int n_;
    RayFamily family_;
    std::vector<double> mat_;        // n_rays x n_unknowns, row-major
    std::vector<double> weights_;    // diagonal quadrature weights per tensor row
    std::vector<std::array<double, 9>> blocks_;  // 3x3 metric inner-product blocks
    std::vector<char> inside_;       // disk mask per grid node
    std::vector<int> interior_;      // vector-field node indices (strictly inside)
    double hx_ = 0.0;

    void apply_ds(const std::vector<double>& v, std::vector<double>& out) const;
    void apply_ds_adjoint(const std::vector<double>& f, std::vector<double>& out) const;
};

}  // namespace dnlab

#endif
