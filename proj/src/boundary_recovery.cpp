#include "dnlab/boundary_recovery.hpp"

#include <Eigen/Dense>

#include <algorithm>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace dnlab {

// ---------------------------------------------------------------------------
// blackboxes

DnBlackbox solver_blackbox(const MetricField& g, int n_angular, int n_radial, double T_max,
                           double out_dt, double inner_radius) {
    SolverGrid grid;
    grid.n_angular = n_angular;
    grid.n_radial = n_radial;

    std::shared_ptr<WaveSolver> solver;
    if (inner_radius >= 0.0) {
        grid.inner_radius = inner_radius;
        solver = std::make_shared<WaveSolver>(g, grid);
        if (inner_radius > 0.0 && T_max > 2.0 * 0.9 * solver->annulus_depth())
            throw ConfigError("solver blackbox: annulus too shallow for the probe window");
    } else {
        // deepest annulus whose round-trip depth clears the probe window
        for (double cand : {0.45, 0.35, 0.25, 0.12, 0.0}) {
            grid.inner_radius = cand;
            solver = std::make_shared<WaveSolver>(g, grid);
            if (cand == 0.0 || T_max <= 2.0 * 0.9 * solver->annulus_depth()) break;
        }
    }

    DnBlackbox bb;
    bb.n_angular = n_angular;
    bb.out_dt = out_dt > 0.0 ? out_dt : std::max(solver->dt(), 1e-4);
    double dt_pin = bb.out_dt;
    bb.apply = [solver, dt_pin](const WaveSolver::BoundaryFn& f, double T) {
        return dn_apply_pinned(*solver, f, T, dt_pin);
    };
    return bb;
}

// ---------------------------------------------------------------------------
// probes

double SymbolProbe::beta(double theta) const {
    return std::cos(theta) * omega.x + std::sin(theta) * omega.y;
}

double SymbolProbe::omega1(double theta) const {
    return -std::sin(theta) * omega.x + std::cos(theta) * omega.y;
}

cplx SymbolProbe::data(double lambda, double t, double theta) const {
    double chi = bump_inf((t - t0) / time_halfwidth) *
                 bump_inf(wrap_angle(theta - theta0) / patch_halfwidth);
    if (chi == 0.0) return 0.0;
    return std::polar(chi, lambda * (t - beta(theta)));
}

// ---------------------------------------------------------------------------
// chart jets

ChartJet chart_jet(const MetricField& g, double theta0, const std::vector<double>& xprime) {
    double span = 0.0;
    for (double xp : xprime) span = std::max(span, std::abs(xp));
    BoundaryChart chart(g, theta0, std::min(1.2 * span + 0.05, 0.9));
    ChartJet jet;
    jet.theta0 = theta0;
    jet.xprime = xprime;
    jet.gamma.resize(xprime.size());
    jet.D.resize(xprime.size());
    jet.E.resize(xprime.size());
    double h = 2e-3;
    parallel_for(xprime.size(), [&](std::size_t i) {
        // one-sided stencils into the domain for gamma(x', .) at x^n = 0
        double v[5];
        for (int q = 0; q < 5; ++q) v[q] = chart.chart_metric(xprime[i], q * h).xx;
        jet.gamma[i] = v[0];
        jet.D[i] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12 * h);
        jet.E[i] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h);
    });
    return jet;
}

// ---------------------------------------------------------------------------
// the symbol algebra shared by the forward map and the inversions

namespace {

struct JetAlgebra {
    // per-node quantities on a uniform x' grid
    std::vector<double> xp, gamma, Dv, Ev, u, a0, u1;  // u = omega1(x'), u1 = d1 a0
    double h = 0.0;

    std::vector<double> d1(const std::vector<double>& f) const {
        std::vector<double> out(f.size());
        for (int i = 0; i < static_cast<int>(f.size()); ++i)
            out[i] = fd_row_deriv(f.data(), static_cast<int>(f.size()), i, h);
        return out;
    }
};

// forward pieces at node i; E enters only through dn_lap
struct NodeJet {
    double gamma, D, E, u, a0, u1, P2;
};

double node_P2(const NodeJet& n) {
    double G1 = 1.0 / n.gamma;
    return (n.D * n.u * n.u / (n.gamma * n.gamma) - 2.0 * G1 * n.u * n.u1) / (2.0 * n.a0);
}

}  // namespace

BoundarySymbols jet_to_symbols(const ChartJet& jet, const SymbolProbe& probe) {
    std::size_t n = jet.xprime.size();
    if (n < 5) throw ContractError("jet_to_symbols: need at least 5 nodes");
    JetAlgebra A;
    A.xp = jet.xprime;
    A.h = jet.xprime[1] - jet.xprime[0];
    A.gamma = jet.gamma;
    A.Dv = jet.D;
    A.Ev = jet.E;
    A.u.resize(n);
    A.a0.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        A.u[i] = probe.omega1(jet.theta0 + jet.xprime[i]);
        double s = 1.0 - A.u[i] * A.u[i] / A.gamma[i];
        if (s <= 0.02)
            throw TransversalityError("jet symbols: probe nearly tangential on the patch");
        A.a0[i] = std::sqrt(s);
    }
    A.u1 = A.d1(A.a0);

    // Delta phi and m1
    std::vector<double> w(n), h_field(n), P2(n), lap(n), m1(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = std::sqrt(A.gamma[i]);
        h_field[i] = A.u[i] / w[i];
        NodeJet nj{A.gamma[i], A.Dv[i], A.Ev[i], A.u[i], A.a0[i], A.u1[i], 0.0};
        P2[i] = node_P2(nj);
    }
    std::vector<double> d1h = A.d1(h_field);
    for (std::size_t i = 0; i < n; ++i) {
        double wp = A.Dv[i] / (2.0 * w[i]);
        lap[i] = d1h[i] / w[i] + (wp * A.a0[i]) / w[i] + P2[i];
        m1[i] = -lap[i] / (2.0 * A.a0[i]);
    }

    // dn Delta phi and m_{A1}
    std::vector<double> u2 = A.d1(P2);  // d_n^2 d_1 phi = d_1 P2
    std::vector<double> dnh(n), P3(n);
    for (std::size_t i = 0; i < n; ++i) {
        double wp = A.Dv[i] / (2.0 * w[i]);
        dnh[i] = A.u1[i] / w[i] - A.u[i] * wp / (w[i] * w[i]);
        double G1 = 1.0 / A.gamma[i];
        double G1p = -A.Dv[i] / sq(A.gamma[i]);
        double G1pp = -A.Ev[i] / sq(A.gamma[i]) + 2.0 * sq(A.Dv[i]) / (sq(A.gamma[i]) * A.gamma[i]);
        P3[i] = -(G1pp * sq(A.u[i]) + 4.0 * G1p * A.u[i] * A.u1[i] + 2.0 * G1 * sq(A.u1[i]) +
                  2.0 * G1 * A.u[i] * u2[i] + 2.0 * sq(P2[i])) /
                (2.0 * A.a0[i]);
    }
    std::vector<double> d1dnh = A.d1(dnh);
    std::vector<double> d1m1 = A.d1(m1);
    BoundarySymbols out;
    out.a0 = A.a0;
    out.m1 = m1;
    out.mA1.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double wp = A.Dv[i] / (2.0 * w[i]);
        double wpp = A.Ev[i] / (2.0 * w[i]) - sq(A.Dv[i]) / (4.0 * w[i] * A.gamma[i]);
        double dnlap = -(wp / sq(w[i])) * (d1h[i] + wp * A.a0[i] + w[i] * P2[i]) +
                       (d1dnh[i] + wpp * A.a0[i] + 2.0 * wp * P2[i] + w[i] * P3[i]) / w[i];
        double G1 = 1.0 / A.gamma[i];
        double dn2A0 = -(2.0 * P2[i] * m1[i] + 2.0 * G1 * A.u[i] * d1m1[i] + dnlap +
                         lap[i] * m1[i]) /
                       (2.0 * A.a0[i]);
        out.mA1[i] = cplx(0.0, -1.0) * (wp * m1[i] + w[i] * dn2A0) / (2.0 * A.a0[i] * w[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic blackbox

DnBlackbox synthetic_blackbox(const ChartJet& jet, double probe_theta0, double noise_delta,
                              std::uint64_t seed) {
    auto jet_ptr = std::make_shared<ChartJet>(jet);
    DnBlackbox bb;
    bb.out_dt = 5e-4;
    bb.n_angular = 512;
    double out_dt = bb.out_dt;
    int n_ang = bb.n_angular;
    (void)probe_theta0;
    bb.apply_probe = [jet_ptr, out_dt, n_ang, noise_delta, seed](const SymbolProbe& probe,
                                                                 double lambda) {
        BoundarySymbols sym = jet_to_symbols(*jet_ptr, probe);
        BoundaryTrace tr;
        tr.kind = BoundaryTrace::Kind::DnOutput;
        tr.dt = out_dt;
        tr.angles.resize(n_ang);
        for (int j = 0; j < n_ang; ++j) tr.angles[j] = 2.0 * pi * j / n_ang;
        std::size_t nt = static_cast<std::size_t>(std::floor(probe.T / out_dt)) + 1;
        tr.values.assign(nt * n_ang, 0.0);

        double h = jet_ptr->xprime[1] - jet_ptr->xprime[0];
        std::vector<double> mA1_im(sym.mA1.size());
        for (std::size_t q = 0; q < mA1_im.size(); ++q) mA1_im[q] = sym.mA1[q].imag();
        auto sym_at = [&](double xp, const std::vector<double>& f) {
            double fi = (xp - jet_ptr->xprime.front()) / h;
            int i = std::clamp(static_cast<int>(fi), 0,
                               static_cast<int>(jet_ptr->xprime.size()) - 2);
            double wv = fi - i;
            return (1 - wv) * f[i] + wv * f[i + 1];
        };

        for (std::size_t k = 0; k < nt; ++k) {
            double t = k * out_dt;
            for (int j = 0; j < n_ang; ++j) {
                double th = tr.angles[j];
                double xp = wrap_angle(th - jet_ptr->theta0);
                if (std::abs(xp) > jet_ptr->xprime.back()) continue;
                double chi = bump_inf((t - probe.t0) / probe.time_halfwidth) *
                             bump_inf(wrap_angle(th - probe.theta0) / probe.patch_halfwidth);
                if (chi == 0.0) continue;
                cplx amp = cplx(0.0, lambda) * sym_at(xp, sym.a0) - sym_at(xp, sym.m1) -
                           cplx(0.0, sym_at(xp, mA1_im)) / lambda;
                tr.at(k, j) = std::polar(chi, lambda * (t - probe.beta(th))) * amp;
            }
        }

        if (noise_delta > 0.0) {
            // ||f||_{H^1} of the probe data on the trace grid
            double hnorm2 = 0.0;
            double ha = 2.0 * pi / n_ang;
            for (std::size_t k = 0; k < nt; ++k) {
                double t = k * out_dt;
                for (int j = 0; j < n_ang; j += 2) {
                    double th = tr.angles[j];
                    cplx f0 = probe.data(lambda, t, th);
                    if (f0 == cplx(0.0)) continue;
                    cplx ft = (probe.data(lambda, t + 1e-5, th) - probe.data(lambda, t - 1e-5, th)) /
                              2e-5;
                    cplx fa = (probe.data(lambda, t, th + 1e-5) - probe.data(lambda, t, th - 1e-5)) /
                              2e-5;
                    hnorm2 += (std::norm(f0) + std::norm(ft) + std::norm(fa)) * out_dt * ha * 2.0;
                }
            }
            double sigma = noise_delta * std::sqrt(hnorm2) / std::sqrt(probe.T * 2.0 * pi);
            std::ostringstream tag;
            tag << "synthetic_noise_l" << lambda << "_t" << probe.t0 << "_o" << probe.omega.x;
            std::mt19937_64 rng(seed_stream(seed, tag.str()));
            std::normal_distribution<double> nd(0.0, sigma / std::sqrt(2.0));
            for (auto& v : tr.values) v += cplx(nd(rng), nd(rng));
        }
        return tr;
    };
    return bb;
}

// ---------------------------------------------------------------------------
// symbol extraction

namespace {

// mean demodulated response per patch node over the settled plateau window
std::vector<cplx> demodulate(const BoundaryTrace& tr, const SymbolProbe& probe, double lambda,
                             const std::vector<double>& patch_angles) {
    std::vector<cplx> q(patch_angles.size(), 0.0);
    double t_lo = probe.t0 + 0.05 * probe.time_halfwidth;
    double t_hi = probe.t0 + 0.45 * probe.time_halfwidth;
    std::size_t k_lo = static_cast<std::size_t>(std::ceil(t_lo / tr.dt));
    std::size_t k_hi =
        std::min(tr.n_time() - 1, static_cast<std::size_t>(std::floor(t_hi / tr.dt)));
    for (std::size_t p = 0; p < patch_angles.size(); ++p) {
        double th = patch_angles[p];
        std::size_t j = static_cast<std::size_t>(
            std::llround(th / (2.0 * pi / static_cast<double>(tr.n_boundary()))));
        j %= tr.n_boundary();
        cplx acc = 0.0;
        for (std::size_t k = k_lo; k <= k_hi; ++k)
            acc += std::polar(1.0, -lambda * (tr.time_of(k) - probe.beta(th))) * tr.at(k, j);
        q[p] = acc / static_cast<double>(k_hi - k_lo + 1);
    }
    return q;
}

}  // namespace

SymbolFit extract_symbol(const DnBlackbox& bb, const SymbolProbe& probe,
                         const std::vector<double>& lambdas, const DnBlackbox* reference,
                         const ChartJet* reference_jet) {
    if (lambdas.size() < 3) throw ConfigError("extract_symbol: need >= 3 lambdas");
    SymbolFit fit;
    fit.probe = probe;
    fit.lambdas = lambdas;

    // demodulated mean response per lambda and patch node
    std::vector<std::vector<cplx>> q(lambdas.size());
    std::vector<double> patch_angles;
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        double lambda = lambdas[li];
        BoundaryTrace tr;
        if (bb.apply_probe) {
            tr = bb.apply_probe(probe, lambda);
        } else {
            auto f = [&](double t, double th) { return probe.data(lambda, t, th); };
            tr = bb.apply(f, probe.T);
        }
        if (tr.dt > 2.0 * pi / (10.0 * lambda))
            throw ResolutionError("extract_symbol: trace undersamples the probe period");
        if (!bb.apply_probe && 2.0 * pi / tr.n_boundary() > 2.0 * pi / (9.0 * lambda))
            throw ResolutionError("extract_symbol: boundary grid undersamples the probe");

        if (patch_angles.empty()) {
            std::vector<std::pair<double, double>> nodes;  // (x', angle)
            for (double th : tr.angles) {
                double xp = wrap_angle(th - probe.theta0);
                if (std::abs(xp) <= 0.4 * probe.patch_halfwidth) nodes.emplace_back(xp, th);
            }
            std::sort(nodes.begin(), nodes.end());
            for (const auto& [xp, th] : nodes) {
                fit.xprime.push_back(xp);
                patch_angles.push_back(th);
            }
            if (fit.xprime.size() < 7)
                throw ResolutionError("extract_symbol: too few boundary nodes on the plateau");
        }

        q[li] = demodulate(tr, probe, lambda, patch_angles);

        if (reference) {
            auto f = [&](double t, double th) { return probe.data(lambda, t, th); };
            BoundaryTrace tref = reference->apply(f, probe.T);
            std::vector<cplx> qr = demodulate(tref, probe, lambda, patch_angles);
            std::optional<BoundarySymbols> ref_sym;
            std::vector<double> ref_xp;
            if (reference_jet) {
                ref_sym = jet_to_symbols(*reference_jet, probe);
                ref_xp = reference_jet->xprime;
            }
            for (std::size_t p = 0; p < patch_angles.size(); ++p) {
                double u = probe.omega1(patch_angles[p]);
                cplx exact;
                if (ref_sym) {
                    double xp = wrap_angle(patch_angles[p] - probe.theta0);
                    double hq = ref_xp[1] - ref_xp[0];
                    double fi = std::clamp((xp - ref_xp.front()) / hq, 0.0,
                                           static_cast<double>(ref_xp.size()) - 1.000001);
                    int i0 = static_cast<int>(fi);
                    double wv = fi - i0;
                    auto lin = [&](const std::vector<double>& f2) {
                        return (1 - wv) * f2[i0] + wv * f2[i0 + 1];
                    };
                    double a0r = lin(ref_sym->a0);
                    double m1r = lin(ref_sym->m1);
                    std::vector<double> im(ref_sym->mA1.size());
                    for (std::size_t t2 = 0; t2 < im.size(); ++t2) im[t2] = ref_sym->mA1[t2].imag();
                    exact = cplx(0.0, lambda) * a0r - m1r - cplx(0.0, lin(im)) / lambda;
                } else {
                    exact = cplx(0.0, lambda * std::sqrt(std::max(1e-12, 1.0 - u * u)));
                }
                cplx corr = qr[p] / exact;
                if (std::abs(corr) < 0.2)
                    throw NumericError("extract_symbol: reference calibration degenerate");
                q[li][p] /= corr;
            }
        }
    }

    // per-node least squares in {i lambda, 1, 1/lambda}
    Eigen::MatrixXcd V(lambdas.size(), 3);
    for (std::size_t li = 0; li < lambdas.size(); ++li) {
        V(li, 0) = cplx(0.0, lambdas[li]);
        V(li, 1) = 1.0;
        V(li, 2) = 1.0 / lambdas[li];
    }
    // conditioning of the column-equilibrated design (scaling-invariant)
    Eigen::MatrixXcd Veq = V;
    for (int c = 0; c < 3; ++c) Veq.col(c) /= Veq.col(c).norm();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd_eq(Veq);
    fit.vandermonde_condition =
        svd_eq.singularValues()(0) / svd_eq.singularValues()(svd_eq.singularValues().size() - 1);
    if (fit.vandermonde_condition > 1e6)
        throw NumericError("extract_symbol: lambda design matrix ill-conditioned; widen the list");
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(V, Eigen::ComputeThinU | Eigen::ComputeThinV);

    std::size_t np = fit.xprime.size();
    fit.a0.resize(np);
    fit.a1.resize(np);
    fit.a2.resize(np);
    fit.residual.resize(np);
    fit.a0_variance.resize(np);
    double inv_l2_mean = 0.0, inv_l2_var = 0.0;
    for (double l : lambdas) inv_l2_mean += 1.0 / (l * l);
    inv_l2_mean /= lambdas.size();
    for (double l : lambdas) inv_l2_var += sq(1.0 / (l * l) - inv_l2_mean);
    for (std::size_t p = 0; p < np; ++p) {
        // moment estimators: the coefficient structure is nearly constant in
        // lambda, so per-power projections beat the extrapolating Vandermonde
        // solve on measured (dispersive) data
        double s_mean = 0.0, r_mean = 0.0, r_im = 0.0;
        for (std::size_t li = 0; li < lambdas.size(); ++li) {
            s_mean += q[li][p].imag() / lambdas[li];
            r_mean += q[li][p].real();
            r_im += q[li][p].imag() - lambdas[li] * 0.0;
        }
        s_mean /= lambdas.size();
        r_mean /= lambdas.size();
        // slope of Im(q)/lambda against 1/lambda^2 isolates the A_1 slot
        double slope = 0.0;
        for (std::size_t li = 0; li < lambdas.size(); ++li)
            slope += (1.0 / sq(lambdas[li]) - inv_l2_mean) *
                     (q[li][p].imag() / lambdas[li] - s_mean);
        slope = inv_l2_var > 0.0 ? slope / inv_l2_var : 0.0;

        fit.a0[p] = s_mean - slope * inv_l2_mean;  // intercept at 1/lambda^2 -> 0
        fit.a1[p] = cplx(r_mean, 0.0);
        fit.a2[p] = cplx(0.0, slope);  // a2 = -mA1, mA1 = -i slope

        // Vandermonde LSQ residual as the fit diagnostic
        Eigen::VectorXcd rhs(lambdas.size());
        for (std::size_t li = 0; li < lambdas.size(); ++li) rhs(li) = q[li][p];
        Eigen::VectorXcd coef = svd.solve(rhs);
        Eigen::VectorXcd res = rhs - V * coef;
        double rms = std::sqrt(res.squaredNorm() / static_cast<double>(lambdas.size()));
        fit.residual[p] = rms;
        double var_s = 0.0;
        for (std::size_t li = 0; li < lambdas.size(); ++li)
            var_s += sq(q[li][p].imag() / lambdas[li] - s_mean);
        var_s /= lambdas.size() * std::max<std::size_t>(1, lambdas.size() - 1);
        // systematic floor: residual grid dispersion after calibration
        fit.a0_variance[p] = var_s + sq(2.5e-3);
    }
    return fit;
}

// ---------------------------------------------------------------------------
// recursion steps

namespace {

// least-squares polynomial projection of a sampled profile (noise control for
// the tangential derivatives in the order >= 1 steps)
std::vector<double> poly_smooth(const std::vector<double>& x, const std::vector<double>& y,
                                int degree) {
    int n = static_cast<int>(x.size());
    if (n <= degree + 2) return y;
    Eigen::MatrixXd V(n, degree + 1);
    for (int i = 0; i < n; ++i) {
        double p = 1.0;
        for (int d = 0; d <= degree; ++d) {
            V(i, d) = p;
            p *= x[i];
        }
    }
    Eigen::VectorXd rhs(n);
    for (int i = 0; i < n; ++i) rhs(i) = y[i];
    Eigen::VectorXd c = V.colPivHouseholderQr().solve(rhs);
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0, p = 1.0;
        for (int d = 0; d <= degree; ++d) {
            acc += c(d) * p;
            p *= x[i];
        }
        out[i] = acc;
    }
    return out;
}

}  // namespace

BoundaryMetricEstimate recover_boundary_metric(const std::vector<SymbolFit>& fits) {
    BoundaryMetricEstimate est;
    bool have = false;
    for (const auto& f : fits) {
        double u0 = f.probe.omega1(f.probe.theta0);
        if (std::abs(u0) < 0.05) continue;  // normal incidence carries no g^{11}
        if (!have) {
            est.xprime = f.xprime;
            est.g11_upper.assign(f.xprime.size(), 0.0);
            est.variance.assign(f.xprime.size(), 0.0);
            have = true;
        }
        if (f.xprime.size() != est.xprime.size())
            throw ContractError("recover_boundary_metric: fits on different patch grids");
        for (std::size_t p = 0; p < f.xprime.size(); ++p) {
            double u = f.probe.omega1(f.probe.theta0 + f.xprime[p]);
            if (std::abs(u) < 0.15) continue;          // too normal at this node
            if (1.0 - sq(f.a0[p]) <= 1e-4) continue;   // unusable sample
            double g11u = (1.0 - sq(f.a0[p])) / sq(u);
            // delta-method variance: d g11 / d a0 = -2 a0 / u^2
            double var = sq(2.0 * f.a0[p] / sq(u)) * f.a0_variance[p] + 1e-12;
            est.g11_upper[p] += g11u / var;
            est.variance[p] += 1.0 / var;
        }
    }
    if (!have) throw ContractError("recover_boundary_metric: no oblique probes supplied");
    for (std::size_t p = 0; p < est.xprime.size(); ++p) {
        if (est.variance[p] == 0.0)
            throw ValidityError("recover_boundary_metric: no usable oblique samples at a node");
        est.g11_upper[p] /= est.variance[p];
        est.variance[p] = 1.0 / est.variance[p];
        if (est.g11_upper[p] <= 0.0)
            throw ValidityError("recover_boundary_metric: nonpositive g^{11} recovered");
    }
    est.g11_upper = poly_smooth(est.xprime, est.g11_upper, 4);
    est.gamma.resize(est.xprime.size());
    for (std::size_t p = 0; p < est.xprime.size(); ++p) est.gamma[p] = 1.0 / est.g11_upper[p];
    return est;
}

std::vector<double> recover_normal_derivative(const std::vector<SymbolFit>& fits,
                                              const BoundaryMetricEstimate& jet0,
                                              std::vector<double>* spread) {
    std::size_t np = jet0.xprime.size();
    double h = jet0.xprime[1] - jet0.xprime[0];
    std::vector<std::vector<double>> samples(np);
    for (const auto& f : fits) {
        if (f.xprime.size() != np)
            throw ContractError("recover_normal_derivative: mismatched patch grids");
        std::vector<double> u(np), a0 = poly_smooth(f.xprime, f.a0, 4), u1(np), m1s(np);
        for (std::size_t p = 0; p < np; ++p) {
            u[p] = f.probe.omega1(f.probe.theta0 + f.xprime[p]);
            m1s[p] = -f.a1[p].real();
        }
        m1s = poly_smooth(f.xprime, m1s, 4);
        for (int p = 0; p < static_cast<int>(np); ++p)
            u1[p] = fd_row_deriv(a0.data(), static_cast<int>(np), p, h);

        // lap_meas = -2 a0 m1, m1 = -Re a1
        std::vector<double> hfield(np), d1h(np);
        for (std::size_t p = 0; p < np; ++p) hfield[p] = u[p] / std::sqrt(jet0.gamma[p]);
        for (int p = 0; p < static_cast<int>(np); ++p)
            d1h[p] = fd_row_deriv(hfield.data(), static_cast<int>(np), p, h);

        for (std::size_t p = 0; p < np; ++p) {
            double gam = jet0.gamma[p];
            double w = std::sqrt(gam);
            double m1 = m1s[p];
            double lap_meas = -2.0 * a0[p] * m1;
            double G1 = 1.0 / gam;
            // lap(D) = d1h/w - G1 u u1 / a0 + D [a0/(2 gam) + u^2/(2 a0 gam^2)]
            double coefD = a0[p] / (2.0 * gam) + sq(u[p]) / (2.0 * a0[p] * sq(gam));
            double base = d1h[p] / w - G1 * u[p] * u1[p] / a0[p];
            double D = (lap_meas - base) / coefD;
            samples[p].push_back(D);
        }
    }
    if (samples.empty() || samples[0].empty())
        throw ContractError("recover_normal_derivative: no usable fits");
    // median across the omega set: robust to the most oblique probes
    std::vector<double> out(np);
    for (std::size_t p = 0; p < np; ++p) {
        std::vector<double> v = samples[p];
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        out[p] = v[v.size() / 2];
        if (spread) {
            std::vector<double> dev;
            for (double x : samples[p]) dev.push_back(std::abs(x - out[p]));
            std::nth_element(dev.begin(), dev.begin() + dev.size() / 2, dev.end());
            (*spread)[p] = 1.4826 * dev[dev.size() / 2];
        }
    }
    return out;
}

std::vector<double> recover_second_derivative(const std::vector<SymbolFit>& fits,
                                              const BoundaryMetricEstimate& jet0,
                                              const std::vector<double>& Dv,
                                              std::vector<double>* spread) {
    std::size_t np = jet0.xprime.size();
    double h = jet0.xprime[1] - jet0.xprime[0];
    std::vector<std::vector<double>> samples(np);
    for (const auto& f : fits) {
        std::vector<double> u(np), a0 = poly_smooth(f.xprime, f.a0, 4), u1(np), m1(np),
                              d1m1(np), P2(np), u2(np);
        for (std::size_t p = 0; p < np; ++p) {
            u[p] = f.probe.omega1(f.probe.theta0 + f.xprime[p]);
            m1[p] = -f.a1[p].real();
        }
        m1 = poly_smooth(f.xprime, m1, 4);
        for (int p = 0; p < static_cast<int>(np); ++p) {
            u1[p] = fd_row_deriv(a0.data(), static_cast<int>(np), p, h);
            d1m1[p] = fd_row_deriv(m1.data(), static_cast<int>(np), p, h);
        }
        for (std::size_t p = 0; p < np; ++p) {
            NodeJet nj{jet0.gamma[p], Dv[p], 0.0, u[p], a0[p], u1[p], 0.0};
            P2[p] = node_P2(nj);
        }
        for (int p = 0; p < static_cast<int>(np); ++p)
            u2[p] = fd_row_deriv(P2.data(), static_cast<int>(np), p, h);

        std::vector<double> hfield(np), d1h(np), dnh(np), d1dnh(np);
        for (std::size_t p = 0; p < np; ++p) {
            double w = std::sqrt(jet0.gamma[p]);
            double wp = Dv[p] / (2.0 * w);
            hfield[p] = u[p] / w;
            dnh[p] = u1[p] / w - u[p] * wp / (w * w);
        }
        for (int p = 0; p < static_cast<int>(np); ++p) {
            d1h[p] = fd_row_deriv(hfield.data(), static_cast<int>(np), p, h);
            d1dnh[p] = fd_row_deriv(dnh.data(), static_cast<int>(np), p, h);
        }

        for (std::size_t p = 0; p < np; ++p) {
            double gam = jet0.gamma[p], D = Dv[p];
            double w = std::sqrt(gam), wp = D / (2.0 * w);
            double G1 = 1.0 / gam, G1p = -D / sq(gam);
            double lap = d1h[p] / w + wp * a0[p] / w + P2[p];

            // measured dn^2 A_0 from the a2 slot
            cplx mA1 = -f.a2[p];
            cplx X = cplx(0.0, 2.0) * a0[p] * w * mA1;
            double dn2A0 = (X.real() - wp * m1[p]) / w;
            double dnlap_meas =
                -(2.0 * P2[p] * m1[p] + 2.0 * G1 * u[p] * d1m1[p] + lap * m1[p] +
                  2.0 * a0[p] * dn2A0);

            // dnlap(E) is affine in E
            auto dnlap_of = [&](double E) {
                double wpp = E / (2.0 * w) - sq(D) / (4.0 * w * gam);
                double G1pp = -E / sq(gam) + 2.0 * sq(D) / (sq(gam) * gam);
                double P3 = -(G1pp * sq(u[p]) + 4.0 * G1p * u[p] * u1[p] + 2.0 * G1 * sq(u1[p]) +
                              2.0 * G1 * u[p] * u2[p] + 2.0 * sq(P2[p])) /
                            (2.0 * a0[p]);
                return -(wp / sq(w)) * (d1h[p] + wp * a0[p] + w * P2[p]) +
                       (d1dnh[p] + wpp * a0[p] + 2.0 * wp * P2[p] + w * P3) / w;
            };
            double f0 = dnlap_of(0.0) - dnlap_meas;
            double f1 = dnlap_of(1.0) - dnlap_meas;
            double E = -f0 / (f1 - f0);
            samples[p].push_back(E);
        }
    }
    std::vector<double> out(np);
    for (std::size_t p = 0; p < np; ++p) {
        std::vector<double> v = samples[p];
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        out[p] = v[v.size() / 2];
        if (spread) {
            std::vector<double> dev;
            for (double x : samples[p]) dev.push_back(std::abs(x - out[p]));
            std::nth_element(dev.begin(), dev.begin() + dev.size() / 2, dev.end());
            (*spread)[p] = 1.4826 * dev[dev.size() / 2];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// orchestration

void BoundaryJet::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "xprime,g11,dn_g11,d2n_g11,err0,err1,err2\n";
    char buf[160];
    for (std::size_t p = 0; p < xprime.size(); ++p) {
        std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%.12g,%.3g,%.3g,%.3g\n", xprime[p],
                      g11[p], p < dn_g11.size() ? dn_g11[p] : 0.0,
                      p < d2n_g11.size() ? d2n_g11[p] : 0.0, error_estimate[0], error_estimate[1],
                      error_estimate[2]);
        out << buf;
    }
}

BoundaryJet recover_jet(const DnBlackbox& bb, double theta0, int m_max,
                        const JetRecoveryOptions& opt) {
    if (m_max < 0 || m_max > 2)
        throw ConfigError("recover_jet: order cap is 2 (higher orders out of scope)");

    Vec2 nu{std::cos(theta0), std::sin(theta0)};
    Vec2 tan{-std::sin(theta0), std::cos(theta0)};

    double gamma_est = opt.gamma_init;
    std::vector<SymbolFit> fits;
    for (int round = 0; round < std::max(1, opt.fixed_point_rounds); ++round) {
        // boundary-matched constant-conformal reference on the same grid; its
        // chart jet is closed-form: gamma = c^2, d_n g11 = -2c, d_n^2 g11 = 2
        std::optional<DnBlackbox> ref_bb;
        ChartJet ref_jet;
        if (opt.reference_factory) {
            double c_ref = std::sqrt(gamma_est);
            MetricField ref_metric = std::abs(c_ref - 1.0) < 1e-9
                                         ? MetricField::euclidean()
                                         : MetricField::conformal(ScalarField::constant(c_ref));
            ref_bb = opt.reference_factory(ref_metric);
            ref_jet.theta0 = theta0;
            int nxp = 41;
            for (int i = 0; i < nxp; ++i) {
                ref_jet.xprime.push_back(-0.5 * opt.patch_halfwidth +
                                         opt.patch_halfwidth * i / (nxp - 1));
                ref_jet.gamma.push_back(gamma_est);
                ref_jet.D.push_back(-2.0 * c_ref);
                ref_jet.E.push_back(2.0);
            }
        }
        bool final_round = round + 1 == std::max(1, opt.fixed_point_rounds);
        fits.clear();
        for (double target : opt.omega_targets) {
            // warm-up rounds skip the most oblique probes: they are the most
            // sensitive to a mismatched reference
            if (!final_round && (std::abs(target) < 0.05 || std::abs(target) > 0.55)) continue;
            SymbolProbe probe;
            probe.theta0 = theta0;
            probe.t0 = opt.t0;
            probe.time_halfwidth = opt.time_halfwidth;
            probe.patch_halfwidth = opt.patch_halfwidth;
            probe.T = opt.t0 + 0.5 * opt.time_halfwidth + 0.1;
            Vec2 omega_hat = tan * target - nu * std::sqrt(1.0 - target * target);
            // g(x0)-normalization with the current gamma estimate
            double norm2 = sq(target) / gamma_est + (1.0 - sq(target));
            probe.omega = omega_hat * (1.0 / std::sqrt(norm2));
            fits.push_back(extract_symbol(bb, probe, opt.lambda_list,
                                          ref_bb ? &*ref_bb : nullptr,
                                          ref_bb ? &ref_jet : nullptr));
        }
        BoundaryMetricEstimate est = recover_boundary_metric(fits);
        gamma_est = est.gamma[est.gamma.size() / 2];
    }

    BoundaryMetricEstimate est = recover_boundary_metric(fits);
    BoundaryJet jet;
    jet.theta0 = theta0;
    jet.xprime = est.xprime;
    jet.g11 = est.gamma;
    jet.order = 0;
    double v0 = 0.0;
    for (double v : est.variance) v0 = std::max(v0, std::sqrt(v));
    // cross-omega spread of the order-0 estimates
    double spread0 = 0.0;
    for (const auto& f : fits) {
        double u0 = f.probe.omega1(f.probe.theta0);
        if (std::abs(u0) < 0.05) continue;
        for (std::size_t p = 0; p < f.xprime.size(); ++p) {
            double u = f.probe.omega1(f.probe.theta0 + f.xprime[p]);
            double gam = sq(u) / (1.0 - sq(f.a0[p]));
            spread0 = std::max(spread0, std::abs(gam - est.gamma[p]));
        }
    }
    jet.error_estimate[0] = std::max(v0, spread0);

    if (m_max >= 1) {
        std::vector<double> spread(est.xprime.size(), 0.0);
        jet.dn_g11 = recover_normal_derivative(fits, est, &spread);
        jet.order = 1;
        jet.error_estimate[1] = *std::max_element(spread.begin(), spread.end());
    }
    if (m_max >= 2) {
        std::vector<double> spread(est.xprime.size(), 0.0);
        jet.d2n_g11 = recover_second_derivative(fits, est, jet.dn_g11, &spread);
        jet.order = 2;
        jet.error_estimate[2] = *std::max_element(spread.begin(), spread.end());
    }
    return jet;
}

}  // namespace dnlab
