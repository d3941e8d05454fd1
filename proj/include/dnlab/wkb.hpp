#ifndef DNLAB_WKB_HPP
#define DNLAB_WKB_HPP

#include <memory>

#include "dnlab/metric.hpp"
#include "dnlab/trace.hpp"

namespace dnlab {

// ---------------------------------------------------------------------------
// cutoff data on (t, boundary)

class CutoffField {
public:
    enum class Kind { Product, Travel };

    // product of C^2 plateau bumps in time and boundary arc (jet probes)
    static CutoffField product(double t0, double time_halfwidth, double theta0,
                               double arc_halfwidth);
    // travel-probe support: chi(|t - t0| + dist_g(x, x0) < radius), plateau on
    // the half-radius set; radius = delta^{mu/2} / C; boundary distance is the
    // g-arc length along the circle measured with the collar metric
    static CutoffField travel(const MetricField& g_collar, double theta0, double t0, double delta,
                              double mu, double C);

    double value(double t, double theta) const;
    double dvalue_dt(double t, double theta) const;  // centered FD

    Kind kind() const { return kind_; }
    double t0() const { return t0_; }
    double theta0() const { return theta0_; }
    double radius() const { return radius_; }             // travel kind: support radius in d
    double time_halfwidth() const { return t_half_; }     // support extent in t
    double arc_halfwidth() const { return arc_half_; }    // support extent in boundary angle
    // max |d_t chi| + |d_theta chi| over a sample grid
    double max_gradient() const;

private:
    Kind kind_ = Kind::Product;
    double t0_ = 0.0, theta0_ = 0.0;
    double t_half_ = 0.1, arc_half_ = 0.3;
    double radius_ = 0.0;
    // travel kind: cumulative g-arc length along the boundary from theta0
    std::vector<double> arc_table_;
    double arc_span_ = 0.0;

    double boundary_arc(double theta) const;
};

// ---------------------------------------------------------------------------
// ray-tube phase fields (method of characteristics)

struct RayTubeOptions {
    int n_tau = 97;             // rays across the tube
    int n_s = 161;              // samples along each ray
    double s_max = 0.8;         // arc length per ray
    double tau_halfwidth = 0.45;  // boundary patch halfwidth (plane) / cone halfwidth (point)
    double ray_step = 1e-3;     // integrator step
};

struct TubeCoord {
    double tau = 0.0, s = 0.0;
    bool ok = false;
};

class RayTube;  // internal grid shared by phase and amplitudes
class WKBPacket;

class PhaseField {
public:
    enum class Kind { PlaneBoundary, PointSource };

    // eikonal solution with boundary values x . omega near the boundary point
    // at angle theta0; omega must be g(x0)-unit and transversal (inward)
    static PhaseField plane(const MetricField& g, double theta0, Vec2 omega,
                            const RayTubeOptions& opt = {});
    // phi(x) = rho_g(x, z0) from an exterior point source, rays in a cone of
    // directions around the disk
    static PhaseField point(const MetricField& g, Vec2 z0, const RayTubeOptions& opt = {});

    PhaseField() = default;

    double value(Vec2 x) const;
    Vec2 grad(Vec2 x) const;
    double laplacian(Vec2 x) const;  // Delta_g phi
    TubeCoord locate(Vec2 x) const;
    Vec2 position(const TubeCoord& tc) const;  // inverse of locate

    Kind kind() const { return kind_; }
    Vec2 omega() const { return omega_; }
    Vec2 source() const { return z0_; }
    double theta0() const { return theta0_; }
    const MetricField& metric() const;
    const std::shared_ptr<const RayTube>& tube() const { return tube_; }

    // d phi / d x^n at a boundary angle (inward-normal derivative)
    double normal_derivative(double theta) const;
    // largest |g^{ij} phi_i phi_j - 1| over interior tube samples
    double eikonal_residual(int n_check = 200) const;

private:
    Kind kind_ = Kind::PlaneBoundary;
    Vec2 omega_, z0_;
    double theta0_ = 0.0;
    std::shared_ptr<const RayTube> tube_;

    friend WKBPacket reflect_packet(const MetricField&, const WKBPacket&, double, double,
                                    const RayTubeOptions&);
};

// ---------------------------------------------------------------------------
// transport amplitudes

class AmplitudeStack {
public:
    using BoundaryAmp = std::function<cplx(double t, double theta)>;

    int order() const { return order_; }
    int time_sign() const { return time_sign_; }
    const CutoffField& cutoff() const;

    // amplitude A_j at (t, x); A_0 is the closed-form spreading solution,
    // higher orders are tabulated on the tube
    cplx value(int j, double t, Vec2 x) const;
    cplx value_at(int j, double theta_ret, const TubeCoord& tc) const;

    // d A_j / d x^n at a boundary angle (used by the jet-recovery oracle)
    cplx normal_derivative(int j, double t, double theta) const;

    // residual of the transport operator applied to A_0 over tube samples
    double transport_residual(int n_check = 200) const;

private:
    friend AmplitudeStack solve_transport(const PhaseField& phi, const CutoffField& chi, int order,
                                          int time_sign);
    friend WKBPacket reflect_packet(const MetricField&, const WKBPacket&, double, double,
                                    const RayTubeOptions&);
    friend class WKBPacket;

    static AmplitudeStack build(const std::shared_ptr<const RayTube>& tube,
                                std::vector<BoundaryAmp> boundary_data,
                                std::shared_ptr<const CutoffField> chi, int order, int time_sign,
                                double t_center, double t_halfwidth);

    std::shared_ptr<const RayTube> tube_;
    std::shared_ptr<const CutoffField> chi_;     // null for reflected stacks
    std::vector<BoundaryAmp> boundary_data_;     // per-order boundary values
    int order_ = 0;
    int time_sign_ = +1;  // +1: e^{i lambda (t - phi)}, -1: e^{i lambda (phi - t)}
    double t_center_ = 0.0, t_halfwidth_ = 0.1;  // time support of the boundary data
    // higher-order amplitude tables on (theta_ret, tau, s)
    int n_thr_ = 0;
    double thr0_ = 0.0, dthr_ = 0.0;
    std::vector<std::vector<cplx>> higher_;

    cplx higher_at(int j, double thr, double tau, double s) const;
};

// solve L A_0 = 0, A_0|_boundary = chi and the recursion for A_1..A_N;
// time_sign selects the phase convention the stack will ride on
AmplitudeStack solve_transport(const PhaseField& phi, const CutoffField& chi, int order,
                               int time_sign = +1);

// ---------------------------------------------------------------------------
// assembled packets

class WKBPacket {
public:
    WKBPacket(PhaseField phi, AmplitudeStack stack, double lambda);

    cplx value(double t, Vec2 x) const;
    cplx boundary_value(double t, double theta) const;
    double lambda() const { return lambda_; }
    int time_sign() const { return stack_.time_sign(); }
    const PhaseField& phase() const { return phi_; }
    const AmplitudeStack& amplitudes() const { return stack_; }

    // residual of (d_tt - Delta_g) applied to the packet at a point, by
    // high-order finite differences of the evaluator
    cplx pde_residual(double t, Vec2 x) const;

    // sample the packet on a boundary-trace grid
    BoundaryTrace boundary_trace(double T, double dt, int n_angular) const;

private:
    PhaseField phi_;
    AmplitudeStack stack_;
    double lambda_;
};

WKBPacket assemble_packet(const PhaseField& phi, const AmplitudeStack& stack, double lambda,
                          int time_sign_check = 0);

// Eq.(25)-style probe support (thin wrapper so the call site matches the role)
CutoffField build_probe_support(const MetricField& g_collar, double theta0, double t0,
                                double delta, double mu, double C);

// reflect an outgoing point-source packet off the boundary arc V (center angle,
// halfwidth): reflected phase shares boundary values on V, gradient inward;
// reflected amplitudes carry the boundary data -A_j|_V order by order
WKBPacket reflect_packet(const MetricField& g, const WKBPacket& incident, double v_center,
                         double v_halfwidth, const RayTubeOptions& opt = {});

}  // namespace dnlab

#endif
