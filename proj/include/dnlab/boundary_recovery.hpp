#ifndef DNLAB_BOUNDARY_RECOVERY_HPP
#define DNLAB_BOUNDARY_RECOVERY_HPP

#include <functional>
#include <optional>

#include "dnlab/chart.hpp"
#include "dnlab/dn_operator.hpp"
#include "dnlab/wkb.hpp"

namespace dnlab {

struct SymbolProbe;

// any map from Dirichlet boundary data to dn-output samples: the true forward
// solver, a synthetic symbol generator, or a noise-wrapped variant
struct DnBlackbox {
    std::function<BoundaryTrace(const WaveSolver::BoundaryFn& f, double T)> apply;
    // optional fast path for oscillatory probes (synthetic generators)
    std::function<BoundaryTrace(const SymbolProbe& probe, double lambda)> apply_probe;
    double out_dt = 0.005;
    int n_angular = 256;
};

// wave-solver blackbox on an annulus grid sized by the probe window (the probe
// never reaches the inner ring within T: finite-speed margin enforced)
DnBlackbox solver_blackbox(const MetricField& g, int n_angular, int n_radial, double T_max,
                           double out_dt = 0.0, double inner_radius = -1.0);

// boundary jet of a metric in the g-normal chart at theta0: gamma = g_11(x'),
// D = d_n g_11, E = d_n^2 g_11, tabulated on an x' grid (oracle for tests and
// the generator behind the synthetic blackbox)
struct ChartJet {
    double theta0 = 0.0;
    std::vector<double> xprime;
    std::vector<double> gamma, D, E;
};
ChartJet chart_jet(const MetricField& g, double theta0, const std::vector<double>& xprime);

// probe descriptor: Cartesian plane-phase data f = e^{i lambda (t - x.omega)} chi
struct SymbolProbe {
    double theta0 = 0.0;
    Vec2 omega;              // Cartesian covector, inward at theta0
    double t0 = 0.45;
    double time_halfwidth = 0.3;
    double patch_halfwidth = 0.5;
    double T = 0.81;

    double beta(double theta) const;    // boundary phase x(theta) . omega
    double omega1(double theta) const;  // tangential symbol component d beta / d x'
    cplx data(double lambda, double t, double theta) const;
};

// least-squares fit of the demodulated response in powers {i lambda, 1, 1/lambda}
struct SymbolFit {
    SymbolProbe probe;
    std::vector<double> lambdas;
    std::vector<double> xprime;          // plateau nodes (offsets from theta0)
    std::vector<double> a0;              // estimates of d phi / d x^n > 0
    std::vector<cplx> a1, a2;            // -d_n A_0 and -d_n A_1 slots
    std::vector<double> residual;        // rms fit residual per node
    std::vector<double> a0_variance;     // propagated variance of a0
    double vandermonde_condition = 0.0;
};

// reference: the same probes measured on an operator with a known boundary
// jet and the same discretization; the measured/exact ratio calibrates out
// grid dispersion. reference_jet describes the reference metric's chart jet
// (flat disk when omitted).
SymbolFit extract_symbol(const DnBlackbox& bb, const SymbolProbe& probe,
                         const std::vector<double>& lambdas,
                         const DnBlackbox* reference = nullptr,
                         const ChartJet* reference_jet = nullptr);

// the forward symbol map on a chart jet: a0, m1 = d_n A_0, mA1 = d_n A_1
struct BoundarySymbols {
    std::vector<double> a0;
    std::vector<double> m1;
    std::vector<cplx> mA1;
};
BoundarySymbols jet_to_symbols(const ChartJet& jet, const SymbolProbe& probe);

// synthetic blackbox emitting the WKB symbol response of a chart jet, plus an
// operator perturbation of size delta in the H^1_0 -> L^2 sense
DnBlackbox synthetic_blackbox(const ChartJet& jet, double probe_theta0, double noise_delta = 0.0,
                              std::uint64_t seed = 0);

// order-0: g^{11}(x') = (1 - a0^2) / omega1^2, combined over oblique probes
struct BoundaryMetricEstimate {
    std::vector<double> xprime;
    std::vector<double> g11_upper;  // g^{11}
    std::vector<double> gamma;      // g_11 = 1 / g^{11}
    std::vector<double> variance;
};
BoundaryMetricEstimate recover_boundary_metric(const std::vector<SymbolFit>& fits);

// order-1: D = d_n g_11 from the transport relation, using the order-0 jet
std::vector<double> recover_normal_derivative(const std::vector<SymbolFit>& fits,
                                              const BoundaryMetricEstimate& jet0,
                                              std::vector<double>* spread = nullptr);

// order-2: E = d_n^2 g_11 from the a2 slot and the order <= 1 jet
std::vector<double> recover_second_derivative(const std::vector<SymbolFit>& fits,
                                              const BoundaryMetricEstimate& jet0,
                                              const std::vector<double>& D,
                                              std::vector<double>* spread = nullptr);

struct BoundaryJet {
    double theta0 = 0.0;
    std::vector<double> xprime;
    std::vector<double> g11;     // gamma = g_11(x', 0)
    std::vector<double> dn_g11;  // D
    std::vector<double> d2n_g11; // E (order 2 only)
    std::array<double, 3> error_estimate{0, 0, 0};
    int order = 0;

    void save_csv(const std::string& path) const;
};

struct JetRecoveryOptions {
    std::vector<double> lambda_list{20.0, 28.0, 40.0, 57.0, 80.0};
    std::vector<double> omega_targets{0.0, 0.4, -0.4, 0.7, -0.7};
    double t0 = 0.45;
    double time_halfwidth = 0.3;
    double patch_halfwidth = 0.5;
    int fixed_point_rounds = 2;
    double gamma_init = 1.0;  // starting boundary-metric guess for scaling/reference
    // dispersion calibration for solver blackboxes: builds the reference
    // operator on the same grid; stage >= 1 uses the boundary-matched constant
    // conformal metric with the recovered g_11
    std::function<DnBlackbox(const MetricField&)> reference_factory;
};

// the Theorem-2 recursion up to order m_max <= 2
BoundaryJet recover_jet(const DnBlackbox& bb, double theta0, int m_max,
                        const JetRecoveryOptions& opt = {});

}  // namespace dnlab

#endif
