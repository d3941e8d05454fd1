#include "dnlab/wave.hpp"

#include <algorithm>
#include <sstream>

namespace dnlab {

void SolverGrid::validate() const {
    if (n_radial < 8 || n_angular < 8) throw ConfigError("solver grid: too few nodes");
    if (n_angular % 2 != 0) throw ConfigError("solver grid: angular count must be even");
    if (stretch < 1.0) throw ConfigError("solver grid: stretch must be >= 1");
    if (inner_radius < 0.0 || inner_radius >= 0.95)
        throw ConfigError("solver grid: inner radius out of range");
    if (cfl_safety <= 0.0 || cfl_safety > 1.0) throw ConfigError("solver grid: bad cfl_safety");
}

double WaveSolver::radial_map(double xi) const {
    double a = std::sqrt(grid_.stretch) - 1.0;
    double m = xi * (1.0 + a) / (1.0 + a * xi);
    if (grid_.inner_radius > 0.0) return grid_.inner_radius + (1.0 - grid_.inner_radius) * m;
    return m;
}

double WaveSolver::radial_map_d(double xi) const {
    double a = std::sqrt(grid_.stretch) - 1.0;
    double md = (1.0 + a) / sq(1.0 + a * xi);
    if (grid_.inner_radius > 0.0) return (1.0 - grid_.inner_radius) * md;
    return md;
}

Vec2 WaveSolver::node_position(int i, int j) const {
    double r = radii_[i];
    double th = angles_[static_cast<std::size_t>(j)];
    return {r * std::cos(th), r * std::sin(th)};
}

WaveSolver::WaveSolver(const MetricField& g, SolverGrid grid) : g_(g), grid_(grid) {
    grid_.validate();
    int nr = grid_.n_radial, na = grid_.n_angular;
    bool annulus = grid_.inner_radius > 0.0;
    hxi_ = annulus ? 1.0 / (nr - 1) : 1.0 / (nr - 0.5);
    hth_ = 2.0 * pi / na;

    angles_.resize(na);
    for (int j = 0; j < na; ++j) angles_[j] = hth_ * j;
    radii_.resize(nr);
    for (int i = 0; i < nr; ++i) {
        double xi = annulus ? i * hxi_ : (i + 0.5) * hxi_;
        radii_[i] = radial_map(xi);
    }

    std::size_t n = static_cast<std::size_t>(nr) * na;
    kxi_.resize(n);
    kth_.resize(n);
    beta_.resize(n);
    isg_.resize(n);
    min_cell_ = 1e30;
    max_speed_ = 0.0;

    for (int i = 0; i < nr; ++i) {
        double xi = annulus ? i * hxi_ : (i + 0.5) * hxi_;
        double r = radii_[i], rd = radial_map_d(xi);
        for (int j = 0; j < na; ++j) {
            double c = std::cos(angles_[j]), s = std::sin(angles_[j]);
            Vec2 x{r * c, r * s};
            Mat2 jac{rd * c, -r * s, rd * s, r * c};
            Sym2 gm = g_.at(x);
            Sym2 ginv = gm.inverse();
            Mat2 jinv = jac.inverse();
            // G^{ab} = J^{-1} g^{-1} J^{-T}
            Sym2 Ginv = Mat2{jinv.a, jinv.c, jinv.b, jinv.d}.congruent(ginv);
            double sqrtG = std::abs(jac.det()) * std::sqrt(gm.det());
            std::size_t id = at(i, j);
            kxi_[id] = sqrtG * Ginv.xx;
            kth_[id] = sqrtG * Ginv.yy;
            beta_[id] = sqrtG * Ginv.xy;
            isg_[id] = 1.0 / sqrtG;

            max_speed_ = std::max(max_speed_, std::sqrt(ginv.max_eig()));
            if (i + 1 < nr) min_cell_ = std::min(min_cell_, radii_[i + 1] - radii_[i]);
            min_cell_ = std::min(min_cell_, r * hth_);
        }
    }
    dt_ = grid_.cfl_safety * min_cell_ / max_speed_;

    // boundary extraction data
    bdry_ginv_.resize(na);
    bdry_jacinv_.resize(na);
    bdry_nu_.resize(na);
    double rd1 = radial_map_d(1.0);
    for (int j = 0; j < na; ++j) {
        double c = std::cos(angles_[j]), s = std::sin(angles_[j]);
        Vec2 x{c, s};
        Mat2 jac{rd1 * c, -s, rd1 * s, c};
        bdry_jacinv_[j] = jac.inverse();
        Sym2 ginv = g_.inv_at(x);
        bdry_ginv_[j] = ginv;
        bdry_nu_[j] = std::sqrt(ginv.quad({c, s}));
    }

    // g-depth of the annulus along radial lines (finite-speed margin checks)
    if (annulus) {
        double depth = 1e30;
        for (int j = 0; j < na; j += 4) {
            double c = std::cos(angles_[j]), s = std::sin(angles_[j]);
            double acc = 0.0;
            int nq = 64;
            for (int q = 0; q < nq; ++q) {
                double r = grid_.inner_radius + (1.0 - grid_.inner_radius) * (q + 0.5) / nq;
                Vec2 x{r * c, r * s};
                acc += std::sqrt(g_.at(x).quad({c, s})) * (1.0 - grid_.inner_radius) / nq;
            }
            depth = std::min(depth, acc);
        }
        annulus_depth_ = depth;
    }
}

void WaveSolver::apply_operator(const std::vector<cplx>& u, std::vector<cplx>& lu) const {
    int nr = grid_.n_radial, na = grid_.n_angular;
    bool annulus = grid_.inner_radius > 0.0;
    double ixi2 = 1.0 / (hxi_ * hxi_), ith2 = 1.0 / (hth_ * hth_);
    double icross = 1.0 / (4.0 * hxi_ * hth_);
    int half = na / 2;
    int i_lo = annulus ? 1 : 0;

    for (int i = i_lo; i < nr - 1; ++i) {
        for (int j = 0; j < na; ++j) {
            std::size_t id = at(i, j);
            int jp = j + 1 == na ? 0 : j + 1;
            int jm = j == 0 ? na - 1 : j - 1;
            std::size_t idp = at(i, jp), idm = at(i, jm);
            std::size_t iup = at(i + 1, j);

            cplx uc = u[id];
            cplx acc;

            // radial flux term
            double kf_up = 0.5 * (kxi_[id] + kxi_[iup]);
            acc = kf_up * (u[iup] - uc) * ixi2;
            if (i > 0) {
                std::size_t idn = at(i - 1, j);
                double kf_dn = 0.5 * (kxi_[id] + kxi_[idn]);
                acc -= kf_dn * (uc - u[idn]) * ixi2;
            }
            // i == 0 full disk: the inner face sits at r = 0, zero flux

            // angular flux term
            double kf_e = 0.5 * (kth_[id] + kth_[idp]);
            double kf_w = 0.5 * (kth_[id] + kth_[idm]);
            acc += (kf_e * (u[idp] - uc) - kf_w * (uc - u[idm])) * ith2;

            // cross terms: Dxi(beta Dth u) + Dth(beta Dxi u), centered
            cplx up_th, dn_th;  // Dth u at i+1 and i-1
            up_th = u[at(i + 1, jp)] - u[at(i + 1, jm)];
            double beta_up = beta_[iup];
            double beta_dn;
            cplx uxi_p, uxi_m;  // Dxi u at j+1 and j-1
            if (i > 0) {
                dn_th = u[at(i - 1, jp)] - u[at(i - 1, jm)];
                beta_dn = beta_[at(i - 1, j)];
                uxi_p = u[at(i + 1, jp)] - u[at(i - 1, jp)];
                uxi_m = u[at(i + 1, jm)] - u[at(i - 1, jm)];
            } else {
                // full disk ring 0: the (i-1) neighbor is ring 0 rotated by pi,
                // with the radial direction flipped (beta is odd across the pole)
                int jq = j + half, jqp = jp + half, jqm = jm + half;
                dn_th = u[at(0, jqp)] - u[at(0, jqm)];
                beta_dn = -beta_[at(0, jq)];
                uxi_p = u[at(i + 1, jp)] - u[at(0, jqp)];
                uxi_m = u[at(i + 1, jm)] - u[at(0, jqm)];
            }
            acc += (beta_up * up_th - beta_dn * dn_th) * icross;
            acc += (beta_[idp] * uxi_p - beta_[idm] * uxi_m) * icross;

            lu[id] = acc * isg_[id];
        }
    }
}

double WaveSolver::energy(const std::vector<cplx>& ua, const std::vector<cplx>& ub,
                          const std::vector<cplx>& lu_a, double dt) const {
    // leapfrog invariant E = 1/2 ||(ua-ub)/dt||_w^2 - 1/2 <L ua, ub>_w
    int nr = grid_.n_radial, na = grid_.n_angular;
    double kin = 0.0, pot = 0.0;
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < na; ++j) {
            std::size_t id = at(i, j);
            double w = hxi_ * hth_ / isg_[id];
            kin += w * std::norm(ua[id] - ub[id]);
            pot += w * (lu_a[id] * std::conj(ub[id])).real();
        }
    return 0.5 * kin / (dt * dt) - 0.5 * pot;
}

void WaveSolver::dn_extract(const std::vector<cplx>& u, cplx* out) const {
    int nr = grid_.n_radial, na = grid_.n_angular;
    double ixi = 1.0 / hxi_, ith = 1.0 / hth_;
    int ib = nr - 1;
    for (int j = 0; j < na; ++j) {
        // one-sided 4-point radial derivative at the boundary ring
        cplx du_xi = (11.0 * u[at(ib, j)] - 18.0 * u[at(ib - 1, j)] + 9.0 * u[at(ib - 2, j)] -
                      2.0 * u[at(ib - 3, j)]) *
                     (ixi / 6.0);
        int jp = (j + 1) % na, jm = (j + na - 1) % na;
        int jp2 = (j + 2) % na, jm2 = (j + na - 2) % na;
        cplx du_th =
            (8.0 * (u[at(ib, jp)] - u[at(ib, jm)]) - (u[at(ib, jp2)] - u[at(ib, jm2)])) *
            (ith / 12.0);
        // grad u in Cartesian components: J^{-T} (du_xi, du_th)
        const Mat2& ji = bdry_jacinv_[j];
        cplx gx = ji.a * du_xi + ji.c * du_th;
        cplx gy = ji.b * du_xi + ji.d * du_th;
        // Lambda f = g^{ij} nu_j d_i u with nu the g-normalized outer conormal
        double c = std::cos(angles_[j]), s = std::sin(angles_[j]);
        Vec2 w = bdry_ginv_[j].apply({c, s});
        out[j] = (w.x * gx + w.y * gy) / bdry_nu_[j];
    }
}

WaveRunResult WaveSolver::run(const BoundaryFn& f, double T, const WaveRunOptions& opt) const {
    if (T <= 0.0) throw ConfigError("wave run: T must be positive");
    int nr = grid_.n_radial, na = grid_.n_angular;
    // compatibility: data vanishes at t = 0
    for (int j = 0; j < na; j += std::max(1, na / 16))
        if (std::abs(f(0.0, angles_[j])) > 1e-12)
            throw ValidityError("wave run: boundary data must vanish at t=0");

    std::size_t steps;
    double dt;
    int dn_every = opt.dn_every;
    if (opt.dn_dt > 0.0) {
        // pin the sample grid: dt divides dn_dt exactly, T is a sample multiple
        std::size_t per = static_cast<std::size_t>(std::ceil(opt.dn_dt / dt_ - 1e-12));
        std::size_t n_samples = static_cast<std::size_t>(std::ceil(T / opt.dn_dt - 1e-9));
        dn_every = static_cast<int>(per);
        steps = n_samples * per;
        dt = opt.dn_dt / static_cast<double>(per);
    } else {
        steps = static_cast<std::size_t>(std::ceil(T / dt_));
        if (dn_every > 0)  // land DN samples exactly on T
            steps = (steps + dn_every - 1) / dn_every * dn_every;
        dt = T / static_cast<double>(steps);
    }
    double dt2 = dt * dt;

    std::size_t n = static_cast<std::size_t>(nr) * na;
    std::vector<cplx> u_prev(n, 0.0), u_cur(n, 0.0), u_next(n, 0.0), lu(n, 0.0);

    std::vector<Vec2> pos;
    if (opt.source) {
        pos.resize(n);
        for (int i = 0; i < nr; ++i)
            for (int j = 0; j < na; ++j) pos[at(i, j)] = node_position(i, j);
    }

    WaveRunResult res;
    std::size_t dn_rows = dn_every > 0 ? steps / dn_every + 1 : 0;
    if (dn_every > 0) {
        res.dn.kind = BoundaryTrace::Kind::DnOutput;
        res.dn.dt = opt.dn_dt > 0.0 ? opt.dn_dt : dt * dn_every;
        res.dn.angles = angles_;
        res.dn.values.assign(dn_rows * na, 0.0);
    }

    int energy_every = std::max(1, dn_every > 0 ? dn_every : static_cast<int>(steps / 512 + 1));
    bool watch = opt.energy_watch_from >= 0.0;
    double e_ref = 0.0;
    bool have_ref = false;
    std::size_t first_watch_step = 0;

    // u^1 from the Taylor start (u0 = ut0 = 0, so only the source contributes)
    int i_lo = grid_.inner_radius > 0 ? 1 : 0;
    for (int j = 0; j < na; ++j) u_cur[at(nr - 1, j)] = f(dt, angles_[j]);
    if (opt.source)
        for (int i = i_lo; i < nr - 1; ++i)
            for (int j = 0; j < na; ++j)
                u_cur[at(i, j)] += 0.5 * dt2 * opt.source(0.0, pos[at(i, j)]);

    if (dn_every > 0) dn_extract(u_prev, &res.dn.values[0]);  // t = 0 row
    if (dn_every == 1 && dn_rows > 1) dn_extract(u_cur, &res.dn.values[na]);

    // invariant entering the loop: u_prev = u^{kc-1}, u_cur = u^{kc}
    for (std::size_t kc = 1; kc < steps; ++kc) {
        double t = kc * dt;
        apply_operator(u_cur, lu);
        if (opt.source) {
            for (int i = i_lo; i < nr - 1; ++i)
                for (int j = 0; j < na; ++j) {
                    std::size_t id = at(i, j);
                    u_next[id] = 2.0 * u_cur[id] - u_prev[id] +
                                 dt2 * (lu[id] + opt.source(t, pos[id]));
                }
        } else {
            for (int i = i_lo; i < nr - 1; ++i)
                for (int j = 0; j < na; ++j) {
                    std::size_t id = at(i, j);
                    u_next[id] = 2.0 * u_cur[id] - u_prev[id] + dt2 * lu[id];
                }
        }
        for (int j = 0; j < na; ++j) u_next[at(nr - 1, j)] = f((kc + 1) * dt, angles_[j]);

        std::swap(u_prev, u_cur);
        std::swap(u_cur, u_next);
        std::size_t k_now = kc + 1;  // u_cur time index

        if (opt.watch_ring >= 0) {
            for (int j = 0; j < na; ++j)
                res.ring_max = std::max(res.ring_max, std::abs(u_cur[at(opt.watch_ring, j)]));
        }
        if (dn_every > 0 && k_now % dn_every == 0) {
            std::size_t row = k_now / dn_every;
            if (row < dn_rows) dn_extract(u_cur, &res.dn.values[row * na]);
        }
        if (watch && k_now * dt >= opt.energy_watch_from && k_now % energy_every == 0) {
            apply_operator(u_cur, lu);
            double e = energy(u_cur, u_prev, lu, dt);
            if (!have_ref) {
                e_ref = e;
                have_ref = true;
                first_watch_step = k_now;
                res.energy_reference = e;
            } else if (std::abs(e_ref) > 0.0) {
                res.energy_drift = std::max(res.energy_drift, std::abs(e - e_ref) / std::abs(e_ref));
                res.energy_steps = k_now - first_watch_step;
            }
        }
    }

    if (opt.keep_final_field) res.final_field = u_cur;
    res.t_final = T;
    return res;
}

BoundaryTrace dn_apply(const WaveSolver& solver, const WaveSolver::BoundaryFn& f, double T,
                       int dn_every) {
    WaveRunOptions opt;
    opt.dn_every = dn_every;
    return solver.run(f, T, opt).dn;
}

BoundaryTrace dn_apply(const MetricField& g, const WaveSolver::BoundaryFn& f, double T,
                       const SolverGrid& grid, int dn_every) {
    WaveSolver solver(g, grid);
    return dn_apply(solver, f, T, dn_every);
}

BoundaryTrace dn_apply_pinned(const WaveSolver& solver, const WaveSolver::BoundaryFn& f, double T,
                              double dn_dt) {
    WaveRunOptions opt;
    opt.dn_dt = dn_dt;
    opt.dn_every = 1;
    return solver.run(f, T, opt).dn;
}

}  // namespace dnlab
