#include "dnlab/wkb.hpp"

#include <algorithm>
#include <sstream>

#include "dnlab/geodesic.hpp"

namespace dnlab {

namespace {

// Lagrange cubic weights for nodes {-1, 0, 1, 2}; interpolatory at all four,
// so edge cells evaluate with t in [-1, 2] without extrapolation artifacts
inline void crw(double t, double w[4]) {
    w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
    w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
    w[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
}

// Hamiltonian ray step: xdot = g^{-1} p, pdot_i = 1/2 w^T (d_i g) w
struct RayState {
    Vec2 x, p;
};

RayState ray_rhs(const MetricField& g, const RayState& s) {
    Sym2 ginv = g.inv_at(s.x);
    Vec2 w = ginv.apply(s.p);
    auto dg = g.d1_at(s.x);
    return {w, {0.5 * dg[0].quad(w), 0.5 * dg[1].quad(w)}};
}

RayState ray_step(const MetricField& g, const RayState& s, double h) {
    auto ax = [](const RayState& a, const RayState& d, double hh) {
        return RayState{a.x + d.x * hh, a.p + d.p * hh};
    };
    RayState k1 = ray_rhs(g, s);
    RayState k2 = ray_rhs(g, ax(s, k1, 0.5 * h));
    RayState k3 = ray_rhs(g, ax(s, k2, 0.5 * h));
    RayState k4 = ray_rhs(g, ax(s, k3, h));
    return {s.x + (k1.x + (k2.x + k3.x) * 2.0 + k4.x) * (h / 6.0),
            s.p + (k1.p + (k2.p + k3.p) * 2.0 + k4.p) * (h / 6.0)};
}

}  // namespace

// ---------------------------------------------------------------------------
// RayTube

class RayTube {
public:
    MetricField g;
    PhaseField::Kind kind = PhaseField::Kind::PlaneBoundary;
    int n_tau = 0, n_s = 0;
    double tau0 = 0.0, dtau = 0.0, ds = 0.0;

    // node fields, index m * n_s + n
    std::vector<double> x1, x2, p1, p2;
    std::vector<double> logb, lapphi;
    std::vector<double> gt1, gt2, gs1, gs2;  // grad tau, grad s (inverse Jacobian rows)
    std::vector<double> sqdetg, gi11, gi12, gi22;
    // per-ray data
    std::vector<double> tau, phi_b, mu, s_entry, theta_entry, logb_entry;
    double b_floor_ratio = 1.0;

    std::size_t id(int m, int n) const { return static_cast<std::size_t>(m) * n_s + n; }

    double field(const std::vector<double>& f, double t, double s) const {
        double fm = std::clamp((t - tau0) / dtau, 0.0, n_tau - 1.000001);
        double fn = std::clamp(s / ds, 0.0, n_s - 1.000001);
        int m = std::clamp(static_cast<int>(fm), 1, n_tau - 3);
        int n = std::clamp(static_cast<int>(fn), 1, n_s - 3);
        double wm[4], wn[4];
        crw(fm - m, wm);
        crw(fn - n, wn);
        double acc = 0.0;
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) acc += wm[a] * wn[b] * f[id(m + a - 1, n + b - 1)];
        return acc;
    }

    double ray_field(const std::vector<double>& f, double t) const {
        double fm = std::clamp((t - tau0) / dtau, 0.0, n_tau - 1.000001);
        int m = std::clamp(static_cast<int>(fm), 1, n_tau - 3);
        double wm[4];
        crw(fm - m, wm);
        double acc = 0.0;
        for (int a = 0; a < 4; ++a) acc += wm[a] * f[m + a - 1];
        return acc;
    }

    TubeCoord locate(Vec2 q, double tol = 1e-11) const {
        // coarse scan for the nearest node
        int best_m = 0, best_n = 0;
        double best = 1e30;
        int sm = std::max(1, n_tau / 24), sn = std::max(1, n_s / 48);
        for (int m = 0; m < n_tau; m += sm)
            for (int n = 0; n < n_s; n += sn) {
                double d = sq(x1[id(m, n)] - q.x) + sq(x2[id(m, n)] - q.y);
                if (d < best) {
                    best = d;
                    best_m = m;
                    best_n = n;
                }
            }
        TubeCoord tc;
        tc.tau = tau0 + best_m * dtau;
        tc.s = best_n * ds;
        double t_lo = tau0, t_hi = tau0 + (n_tau - 1) * dtau;
        double s_lo = 0.0, s_hi = (n_s - 1) * ds;
        for (int it = 0; it < 60; ++it) {
            Vec2 X{field(x1, tc.tau, tc.s), field(x2, tc.tau, tc.s)};
            Vec2 r = X - q;
            if (r.norm() < tol) {
                tc.ok = true;
                return tc;
            }
            Vec2 dxdt{field(gt_dx1_, tc.tau, tc.s), field(gt_dx2_, tc.tau, tc.s)};
            Vec2 w = g.inv_at(X).apply({field(p1, tc.tau, tc.s), field(p2, tc.tau, tc.s)});
            Mat2 jac{dxdt.x, w.x, dxdt.y, w.y};
            if (std::abs(jac.det()) < 1e-12) break;
            Vec2 d = jac.inverse().apply(r);
            double damp = d.norm() > 0.2 ? 0.2 / d.norm() : 1.0;
            tc.tau = std::clamp(tc.tau - damp * d.x, t_lo, t_hi);
            tc.s = std::clamp(tc.s - damp * d.y, s_lo, s_hi);
        }
        Vec2 X{field(x1, tc.tau, tc.s), field(x2, tc.tau, tc.s)};
        tc.ok = (X - q).norm() < 1e-8;
        return tc;
    }

    std::vector<double> gt_dx1_, gt_dx2_;  // d x / d tau fields
};

namespace {

std::shared_ptr<RayTube> build_tube(const MetricField& g, PhaseField::Kind kind,
                                    const std::vector<RayState>& launches,
                                    const std::vector<double>& taus,
                                    const std::vector<double>& phi_b,
                                    const std::vector<double>& mu, const RayTubeOptions& opt,
                                    bool rays_enter_disk) {
    auto tube = std::make_shared<RayTube>();
    tube->g = g;
    tube->kind = kind;
    tube->n_tau = static_cast<int>(launches.size());
    tube->n_s = opt.n_s;
    tube->tau0 = taus.front();
    tube->dtau = taus.size() > 1 ? taus[1] - taus[0] : 1.0;
    tube->ds = opt.s_max / (opt.n_s - 1);
    tube->tau = taus;
    tube->phi_b = phi_b;
    tube->mu = mu;

    int nt = tube->n_tau, ns = tube->n_s;
    std::size_t nn = static_cast<std::size_t>(nt) * ns;
    tube->x1.resize(nn);
    tube->x2.resize(nn);
    tube->p1.resize(nn);
    tube->p2.resize(nn);
    tube->s_entry.assign(nt, 0.0);
    tube->theta_entry.assign(nt, 0.0);

    parallel_for(static_cast<std::size_t>(nt), [&](std::size_t m) {
        RayState s = launches[m];
        double s_now = 0.0;
        tube->x1[tube->id(m, 0)] = s.x.x;
        tube->x2[tube->id(m, 0)] = s.x.y;
        tube->p1[tube->id(m, 0)] = s.p.x;
        tube->p2[tube->id(m, 0)] = s.p.y;
        bool entered = !rays_enter_disk;
        double prev_r = s.x.norm();
        for (int n = 1; n < ns; ++n) {
            double target = n * tube->ds;
            while (s_now < target - 1e-14) {
                double h = std::min(opt.ray_step, target - s_now);
                RayState nxt = ray_step(g, s, h);
                if (!entered && nxt.x.norm() <= 1.0 && prev_r > 1.0) {
                    // refine the boundary entry arc length
                    double lo = 0.0, hi = 1.0;
                    for (int it = 0; it < 50; ++it) {
                        double mid = 0.5 * (lo + hi);
                        if (ray_step(g, s, mid * h).x.norm() > 1.0)
                            lo = mid;
                        else
                            hi = mid;
                    }
                    double frac = 0.5 * (lo + hi);
                    RayState es = ray_step(g, s, frac * h);
                    tube->s_entry[m] = s_now + frac * h;
                    tube->theta_entry[m] = std::atan2(es.x.y, es.x.x);
                    entered = true;
                }
                prev_r = nxt.x.norm();
                s = nxt;
                s_now += h;
            }
            tube->x1[tube->id(m, n)] = s.x.x;
            tube->x2[tube->id(m, n)] = s.x.y;
            tube->p1[tube->id(m, n)] = s.p.x;
            tube->p2[tube->id(m, n)] = s.p.y;
        }
        if (kind == PhaseField::Kind::PlaneBoundary) {
            tube->theta_entry[m] = std::atan2(launches[m].x.y, launches[m].x.x);
            tube->s_entry[m] = 0.0;
        }
    });

    // spreading and derived fields
    tube->gt_dx1_.resize(nn);
    tube->gt_dx2_.resize(nn);
    tube->logb.resize(nn);
    tube->lapphi.resize(nn);
    tube->gt1.resize(nn);
    tube->gt2.resize(nn);
    tube->gs1.resize(nn);
    tube->gs2.resize(nn);
    tube->sqdetg.resize(nn);
    tube->gi11.resize(nn);
    tube->gi12.resize(nn);
    tube->gi22.resize(nn);

    std::vector<double> col(nt);
    for (int n = 0; n < ns; ++n) {
        for (int m = 0; m < nt; ++m) col[m] = tube->x1[tube->id(m, n)];
        for (int m = 0; m < nt; ++m)
            tube->gt_dx1_[tube->id(m, n)] = fd_row_deriv(col.data(), nt, m, tube->dtau);
        for (int m = 0; m < nt; ++m) col[m] = tube->x2[tube->id(m, n)];
        for (int m = 0; m < nt; ++m)
            tube->gt_dx2_[tube->id(m, n)] = fd_row_deriv(col.data(), nt, m, tube->dtau);
    }
    for (int m = 0; m < nt; ++m)
        for (int n = 0; n < ns; ++n) {
            std::size_t i = tube->id(m, n);
            Vec2 x{tube->x1[i], tube->x2[i]};
            Sym2 gm = g.at(x);
            Sym2 gi = gm.inverse();
            Vec2 dxt{tube->gt_dx1_[i], tube->gt_dx2_[i]};
            double Q = gm.quad(dxt);
            double b2 = Q - sq(tube->mu[m]);
            tube->logb[i] = 0.5 * std::log(std::max(b2, 1e-28));
            Vec2 w = gi.apply({tube->p1[i], tube->p2[i]});
            Mat2 jac{dxt.x, w.x, dxt.y, w.y};
            Mat2 ji = std::abs(jac.det()) > 1e-14 ? jac.inverse() : Mat2{0, 0, 0, 0};
            tube->gt1[i] = ji.a;
            tube->gt2[i] = ji.b;
            tube->gs1[i] = ji.c;
            tube->gs2[i] = ji.d;
            tube->sqdetg[i] = std::sqrt(gm.det());
            tube->gi11[i] = gi.xx;
            tube->gi12[i] = gi.xy;
            tube->gi22[i] = gi.yy;
        }
    // Delta_g phi = d/ds log b along each ray
    std::vector<double> row(ns);
    for (int m = 0; m < nt; ++m) {
        for (int n = 0; n < ns; ++n) row[n] = tube->logb[tube->id(m, n)];
        for (int n = 0; n < ns; ++n)
            tube->lapphi[tube->id(m, n)] = fd_row_deriv(row.data(), ns, n, tube->ds);
    }
    tube->logb_entry.resize(nt);
    for (int m = 0; m < nt; ++m) {
        double se = tube->s_entry[m];
        double fn = std::clamp(se / tube->ds, 0.0, ns - 1.0);
        int n0 = std::clamp(static_cast<int>(fn), 0, ns - 2);
        double w = fn - n0;
        tube->logb_entry[m] =
            (1 - w) * tube->logb[tube->id(m, n0)] + w * tube->logb[tube->id(m, n0 + 1)];
    }

    // caustic check: spreading must not collapse past the entry
    double worst = 1.0;
    for (int m = 0; m < nt; ++m) {
        int n_from = static_cast<int>(tube->s_entry[m] / tube->ds) + 1;
        for (int n = std::max(1, n_from); n < ns; ++n) {
            double ratio = std::exp(tube->logb[tube->id(m, n)] - tube->logb_entry[m]);
            worst = std::min(worst, ratio);
        }
    }
    tube->b_floor_ratio = worst;
    if (worst < 0.05) {
        std::ostringstream os;
        os << "ray tube: spreading collapsed to " << worst
           << " of its boundary value (caustic); shrink the patch or check simplicity";
        throw CausticError(os.str());
    }
    return tube;
}

}  // namespace

// ---------------------------------------------------------------------------
// PhaseField

PhaseField PhaseField::plane(const MetricField& g, double theta0, Vec2 omega,
                             const RayTubeOptions& opt) {
    Vec2 x0{std::cos(theta0), std::sin(theta0)};
    Sym2 gi0 = g.inv_at(x0);
    if (std::abs(gi0.quad(omega) - 1.0) > 1e-6)
        throw DomainError("plane phase: omega must be g(x0)-unit");
    Vec2 nu0{std::cos(theta0), std::sin(theta0)};
    double trans = gi0.quad(omega, nu0) / std::sqrt(gi0.quad(nu0));
    if (trans > -0.05)
        throw TransversalityError("plane phase: omega tangential or outward at x0");

    int nt = opt.n_tau;
    std::vector<RayState> launches(nt);
    std::vector<double> taus(nt), phib(nt), mu(nt);
    for (int m = 0; m < nt; ++m) {
        double tau = -opt.tau_halfwidth + 2.0 * opt.tau_halfwidth * m / (nt - 1);
        double th = theta0 + tau;
        Vec2 b{std::cos(th), std::sin(th)};
        Sym2 gi = g.inv_at(b);
        Vec2 nu{std::cos(th), std::sin(th)};
        double nn = gi.quad(nu);
        Vec2 nuh = nu / std::sqrt(nn);
        // p = omega + c nu_hat with g^{-1}(p,p) = 1, inward root
        double B = 2.0 * gi.quad(omega, nuh);
        double C = gi.quad(omega) - 1.0;
        double disc = B * B - 4.0 * C;
        if (disc <= 1e-12)
            throw TransversalityError("plane phase: no transversal characteristic at patch edge");
        double c1 = 0.5 * (-B - std::sqrt(disc));
        double c2 = 0.5 * (-B + std::sqrt(disc));
        Vec2 pa = omega + nuh * c1, pb = omega + nuh * c2;
        Vec2 p = gi.apply(pa).dot(nu) < 0.0 ? pa : pb;
        if (gi.apply(p).dot(nu) >= 0.0)
            throw TransversalityError("plane phase: characteristic not inward");
        launches[m] = {b, p};
        taus[m] = tau;
        phib[m] = b.dot(omega);
        mu[m] = omega.dot({-std::sin(th), std::cos(th)});
    }
    PhaseField f;
    f.kind_ = Kind::PlaneBoundary;
    f.omega_ = omega;
    f.theta0_ = theta0;
    f.tube_ = build_tube(g, Kind::PlaneBoundary, launches, taus, phib, mu, opt, false);
    return f;
}

PhaseField PhaseField::point(const MetricField& g, Vec2 z0, const RayTubeOptions& opt) {
    double R = z0.norm();
    if (R <= 1.0) throw DomainError("point phase: source must lie outside the closed disk");
    double center = std::atan2(-z0.y, -z0.x);  // toward the disk
    int nt = opt.n_tau;
    std::vector<RayState> launches(nt);
    std::vector<double> taus(nt), phib(nt, 0.0), mu(nt, 0.0);
    for (int m = 0; m < nt; ++m) {
        double a = center - opt.tau_halfwidth + 2.0 * opt.tau_halfwidth * m / (nt - 1);
        Vec2 e{std::cos(a), std::sin(a)};
        Sym2 gm = g.at(z0);
        Vec2 v = e / std::sqrt(gm.quad(e));
        launches[m] = {z0, gm.apply(v)};
        taus[m] = a;
    }
    PhaseField f;
    f.kind_ = Kind::PointSource;
    f.z0_ = z0;
    f.tube_ = build_tube(g, Kind::PointSource, launches, taus, phib, mu, opt, true);
    // every ray must reach the disk for the fan to cover the patch
    for (int m = 0; m < f.tube_->n_tau; ++m)
        if (f.tube_->s_entry[m] == 0.0)
            throw GeometryError("point phase: a fan ray missed the disk; narrow the cone");
    return f;
}

const MetricField& PhaseField::metric() const { return tube_->g; }

TubeCoord PhaseField::locate(Vec2 x) const { return tube_->locate(x); }

Vec2 PhaseField::position(const TubeCoord& tc) const {
    return {tube_->field(tube_->x1, tc.tau, tc.s), tube_->field(tube_->x2, tc.tau, tc.s)};
}

double PhaseField::value(Vec2 x) const {
    TubeCoord tc = tube_->locate(x);
    if (!tc.ok) throw DomainError("phase field: point outside the ray tube");
    return tube_->ray_field(tube_->phi_b, tc.tau) + tc.s;
}

Vec2 PhaseField::grad(Vec2 x) const {
    TubeCoord tc = tube_->locate(x);
    if (!tc.ok) throw DomainError("phase field: point outside the ray tube");
    return {tube_->field(tube_->p1, tc.tau, tc.s), tube_->field(tube_->p2, tc.tau, tc.s)};
}

double PhaseField::laplacian(Vec2 x) const {
    TubeCoord tc = tube_->locate(x);
    if (!tc.ok) throw DomainError("phase field: point outside the ray tube");
    return tube_->field(tube_->lapphi, tc.tau, tc.s);
}

double PhaseField::normal_derivative(double theta) const {
    const RayTube& t = *tube_;
    BoundaryFrame fr = boundary_frame(t.g, theta);
    if (kind_ == Kind::PlaneBoundary) {
        double tau = wrap_angle(theta - theta0_);
        Vec2 p{t.field(t.p1, tau, 0.0), t.field(t.p2, tau, 0.0)};
        return p.dot(fr.normal_in);
    }
    // point source: find the ray entering at this boundary angle
    double lo = t.tau[0], hi = t.tau[t.n_tau - 1];
    for (int it = 0; it < 80; ++it) {
        double mid = 0.5 * (lo + hi);
        double th = t.ray_field(t.theta_entry, mid);
        if (wrap_angle(th - theta) * wrap_angle(t.ray_field(t.theta_entry, lo) - theta) <= 0.0)
            hi = mid;
        else
            lo = mid;
    }
    double tau = 0.5 * (lo + hi);
    double se = t.ray_field(t.s_entry, tau);
    Vec2 p{t.field(t.p1, tau, se), t.field(t.p2, tau, se)};
    return p.dot(fr.normal_in);
}

double PhaseField::eikonal_residual(int n_check) const {
    const RayTube& t = *tube_;
    double worst = 0.0;
    std::uint64_t state = 0x9d2c5680u;
    auto next = [&] {
        state = state * 6364136223846793005ull + 1442695040888963407ull;
        return (state >> 11) * (1.0 / 9007199254740992.0);
    };
    for (int k = 0; k < n_check; ++k) {
        double tau = t.tau0 + (0.08 + 0.84 * next()) * (t.n_tau - 1) * t.dtau;
        double se = t.ray_field(t.s_entry, tau);
        double s = se + (0.05 + 0.9 * next()) * ((t.n_s - 1) * t.ds - se);
        Vec2 x{t.field(t.x1, tau, s), t.field(t.x2, tau, s)};
        if (x.norm() > 1.0) continue;
        Vec2 p{t.field(t.p1, tau, s), t.field(t.p2, tau, s)};
        worst = std::max(worst, std::abs(t.g.inv_at(x).quad(p) - 1.0));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// CutoffField

CutoffField CutoffField::product(double t0, double time_halfwidth, double theta0,
                                 double arc_halfwidth) {
    CutoffField c;
    c.kind_ = Kind::Product;
    c.t0_ = t0;
    c.theta0_ = theta0;
    c.t_half_ = time_halfwidth;
    c.arc_half_ = arc_halfwidth;
    return c;
}

CutoffField CutoffField::travel(const MetricField& g_collar, double theta0, double t0,
                                double delta, double mu, double C) {
    if (delta <= 0.0 || delta > 1.0) throw ConfigError("probe support: delta must be in (0,1]");
    if (C < 1.0) throw ConfigError("probe support: C must be >= 1");
    CutoffField c;
    c.kind_ = Kind::Travel;
    c.t0_ = t0;
    c.theta0_ = theta0;
    c.radius_ = std::pow(delta, mu / 2.0) / C;
    c.t_half_ = c.radius_;
    // cumulative g-arc length along the boundary, symmetric table around theta0
    c.arc_span_ = pi;
    int n = 1024;
    c.arc_table_.assign(2 * n + 1, 0.0);
    double h = c.arc_span_ / n;
    auto speed = [&](double th) {
        Vec2 p{std::cos(th), std::sin(th)};
        Vec2 T{-std::sin(th), std::cos(th)};
        return std::sqrt(g_collar.at(p).quad(T));
    };
    for (int i = 1; i <= n; ++i) {
        double a = theta0 + (i - 0.5) * h;
        double b = theta0 - (i - 0.5) * h;
        c.arc_table_[n + i] = c.arc_table_[n + i - 1] + h * speed(a);
        c.arc_table_[n - i] = c.arc_table_[n - i + 1] + h * speed(b);
    }
    // angular halfwidth of the support
    double hw = pi;
    for (int i = 0; i <= n; ++i)
        if (c.arc_table_[n + i] >= c.radius_) {
            hw = i * h;
            break;
        }
    c.arc_half_ = hw;
    return c;
}

double CutoffField::boundary_arc(double theta) const {
    double d = wrap_angle(theta - theta0_);
    int n = (static_cast<int>(arc_table_.size()) - 1) / 2;
    double h = arc_span_ / n;
    double f = std::clamp(std::abs(d) / h, 0.0, static_cast<double>(n) - 1e-9);
    int i = static_cast<int>(f);
    double w = f - i;
    return (1 - w) * arc_table_[n + i] + w * arc_table_[n + i + 1];
}

double CutoffField::value(double t, double theta) const {
    if (kind_ == Kind::Product)
        return bump_inf((t - t0_) / t_half_) * bump_inf(wrap_angle(theta - theta0_) / arc_half_);
    double d = std::abs(t - t0_) + boundary_arc(theta);
    return plateau_cutoff_inf(d, 0.5 * radius_, radius_);
}

double CutoffField::dvalue_dt(double t, double theta) const {
    double h = 1e-6;
    return (value(t + h, theta) - value(t - h, theta)) / (2 * h);
}

double CutoffField::max_gradient() const {
    double worst = 0.0;
    int n = 160;
    double tspan = t_half_ * 1.2, aspan = arc_half_ * 1.2;
    double ht = tspan / 400, ha = aspan / 400;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            double t = t0_ - tspan + 2 * tspan * i / n;
            double a = theta0_ - aspan + 2 * aspan * j / n;
            double dt = (value(t + ht, a) - value(t - ht, a)) / (2 * ht);
            double da = (value(t, a + ha) - value(t, a - ha)) / (2 * ha);
            worst = std::max(worst, std::abs(dt) + std::abs(da));
        }
    return worst;
}

CutoffField build_probe_support(const MetricField& g_collar, double theta0, double t0,
                                double delta, double mu, double C) {
    return CutoffField::travel(g_collar, theta0, t0, delta, mu, C);
}

// ---------------------------------------------------------------------------
// transport

namespace {

// 3D fields on (theta_ret, tau, s)
struct TubeField3 {
    int nth = 0, ntau = 0, ns = 0;
    std::vector<cplx> v;
    cplx& at(int k, int m, int n) {
        return v[(static_cast<std::size_t>(k) * ntau + m) * ns + n];
    }
    cplx at(int k, int m, int n) const {
        return v[(static_cast<std::size_t>(k) * ntau + m) * ns + n];
    }
    void resize(int k, int m, int n) {
        nth = k;
        ntau = m;
        ns = n;
        v.assign(static_cast<std::size_t>(k) * m * n, 0.0);
    }
};

// 4th-order axis derivative of a 3D complex field (one-sided at the edges)
cplx axis_deriv(const TubeField3& f, int k, int m, int n, int axis, double h) {
    auto get = [&](int dk) {
        int kk = k, mm = m, nn = n;
        (axis == 0 ? kk : axis == 1 ? mm : nn) += dk;
        return f.at(kk, mm, nn);
    };
    int idx = axis == 0 ? k : axis == 1 ? m : n;
    int size = axis == 0 ? f.nth : axis == 1 ? f.ntau : f.ns;
    if (idx >= 2 && idx + 2 < size)
        return (8.0 * (get(1) - get(-1)) - (get(2) - get(-2))) / (12.0 * h);
    if (idx == 0)
        return (-25.0 * get(0) + 48.0 * get(1) - 36.0 * get(2) + 16.0 * get(3) - 3.0 * get(4)) /
               (12.0 * h);
    if (idx == 1)
        return (-3.0 * get(-1) - 10.0 * get(0) + 18.0 * get(1) - 6.0 * get(2) + get(3)) /
               (12.0 * h);
    if (idx == size - 1)
        return (25.0 * get(0) - 48.0 * get(-1) + 36.0 * get(-2) - 16.0 * get(-3) + 3.0 * get(-4)) /
               (12.0 * h);
    return (3.0 * get(1) + 10.0 * get(0) - 18.0 * get(-1) + 6.0 * get(-2) - get(-3)) / (12.0 * h);
}

}  // namespace

AmplitudeStack AmplitudeStack::build(const std::shared_ptr<const RayTube>& tube,
                                     std::vector<BoundaryAmp> boundary_data,
                                     std::shared_ptr<const CutoffField> chi, int order,
                                     int time_sign, double t_center, double t_halfwidth) {
    const RayTube& t = *tube;
    AmplitudeStack st;
    st.tube_ = tube;
    st.chi_ = std::move(chi);
    st.boundary_data_ = std::move(boundary_data);
    st.order_ = order;
    st.time_sign_ = time_sign;
    st.t_center_ = t_center;
    st.t_halfwidth_ = t_halfwidth;
    if (order == 0) return st;

    // retarded-time grid spanning the boundary-data time support
    int nth = 49;
    double margin = 1.15;
    st.n_thr_ = nth;
    double se_min = *std::min_element(t.s_entry.begin(), t.s_entry.end());
    double se_max = *std::max_element(t.s_entry.begin(), t.s_entry.end());
    double lo = t_center - t_halfwidth * margin - se_max;
    double hi = t_center + t_halfwidth * margin - se_min;
    st.thr0_ = lo;
    st.dthr_ = (hi - lo) / (nth - 1);

    int ntau = t.n_tau, ns = t.n_s;
    TubeField3 prev;
    prev.resize(nth, ntau, ns);
    // materialize A_0 = b_0(thr + s_entry, theta_entry) * sqrt(b_entry / b)
    for (int k = 0; k < nth; ++k) {
        double thr = st.thr0_ + k * st.dthr_;
        for (int m = 0; m < ntau; ++m) {
            cplx bval = st.boundary_data_[0](thr + t.s_entry[m], t.theta_entry[m]);
            for (int n = 0; n < ns; ++n) {
                double spread = std::exp(0.5 * (t.logb_entry[m] - t.logb[t.id(m, n)]));
                prev.at(k, m, n) = bval * spread;
            }
        }
    }

    TubeField3 w1, w2, dthr, source, next;
    for (int j = 1; j <= order; ++j) {
        // spatial gradient at fixed physical time:
        // grad = dF/dtau grad_tau + (dF/ds - dF/dthr) grad_s
        w1.resize(nth, ntau, ns);
        w2.resize(nth, ntau, ns);
        for (int k = 0; k < nth; ++k)
            for (int m = 0; m < ntau; ++m)
                for (int n = 0; n < ns; ++n) {
                    cplx ft = axis_deriv(prev, k, m, n, 1, t.dtau);
                    cplx fs =
                        axis_deriv(prev, k, m, n, 2, t.ds) - axis_deriv(prev, k, m, n, 0, st.dthr_);
                    std::size_t i = t.id(m, n);
                    cplx gx = ft * t.gt1[i] + fs * t.gs1[i];
                    cplx gy = ft * t.gt2[i] + fs * t.gs2[i];
                    w1.at(k, m, n) = t.sqdetg[i] * (t.gi11[i] * gx + t.gi12[i] * gy);
                    w2.at(k, m, n) = t.sqdetg[i] * (t.gi12[i] * gx + t.gi22[i] * gy);
                }
        dthr.resize(nth, ntau, ns);
        for (int k = 0; k < nth; ++k)
            for (int m = 0; m < ntau; ++m)
                for (int n = 0; n < ns; ++n)
                    dthr.at(k, m, n) = axis_deriv(prev, k, m, n, 0, st.dthr_);
        // source S = time_sign * (i/2) (d_tt - Delta_g) A_{j-1}
        source.resize(nth, ntau, ns);
        for (int k = 0; k < nth; ++k)
            for (int m = 0; m < ntau; ++m)
                for (int n = 0; n < ns; ++n) {
                    cplx d1t = axis_deriv(w1, k, m, n, 1, t.dtau);
                    cplx d1s =
                        axis_deriv(w1, k, m, n, 2, t.ds) - axis_deriv(w1, k, m, n, 0, st.dthr_);
                    cplx d2t = axis_deriv(w2, k, m, n, 1, t.dtau);
                    cplx d2s =
                        axis_deriv(w2, k, m, n, 2, t.ds) - axis_deriv(w2, k, m, n, 0, st.dthr_);
                    std::size_t i = t.id(m, n);
                    cplx lap =
                        (d1t * t.gt1[i] + d1s * t.gs1[i] + d2t * t.gt2[i] + d2s * t.gs2[i]) /
                        t.sqdetg[i];
                    cplx dtt = axis_deriv(dthr, k, m, n, 0, st.dthr_);
                    source.at(k, m, n) = cplx(0.0, 0.5 * time_sign) * (dtt - lap);
                }
        // 2 A' + (Delta phi) A = 2 S along rays: d(sqrt(b) A)/ds = sqrt(b) S,
        // boundary data b_j transported homogeneously on top
        next.resize(nth, ntau, ns);
        bool have_bj = j < static_cast<int>(st.boundary_data_.size()) && st.boundary_data_[j];
        for (int k = 0; k < nth; ++k) {
            double thr = st.thr0_ + k * st.dthr_;
            for (int m = 0; m < ntau; ++m) {
                double se = t.s_entry[m];
                std::vector<cplx> pref(ns, 0.0);
                for (int n = 1; n < ns; ++n) {
                    cplx fa = std::exp(0.5 * t.logb[t.id(m, n - 1)]) * source.at(k, m, n - 1);
                    cplx fb = std::exp(0.5 * t.logb[t.id(m, n)]) * source.at(k, m, n);
                    pref[n] = pref[n - 1] + 0.5 * t.ds * (fa + fb);
                }
                double fe = std::clamp(se / t.ds, 0.0, static_cast<double>(ns - 1));
                int n0 = std::clamp(static_cast<int>(fe), 0, ns - 2);
                cplx pe = pref[n0] + (fe - n0) * (pref[n0 + 1] - pref[n0]);
                cplx hom = have_bj ? st.boundary_data_[j](thr + se, t.theta_entry[m]) : cplx(0.0);
                for (int n = 0; n < ns; ++n) {
                    double spread = std::exp(0.5 * (t.logb_entry[m] - t.logb[t.id(m, n)]));
                    next.at(k, m, n) = (pref[n] - pe) * std::exp(-0.5 * t.logb[t.id(m, n)]) +
                                       hom * spread;
                }
            }
        }
        st.higher_.push_back(next.v);
        prev = std::move(next);
    }
    return st;
}

AmplitudeStack solve_transport(const PhaseField& phi, const CutoffField& chi, int order,
                               int time_sign) {
    const auto& tube = phi.tube();
    if (!tube) throw ContractError("transport: empty phase field");
    if (2 * order + 2 > tube->g.smoothness())
        throw CapabilityError("transport: order exceeds the metric smoothness budget");
    if (time_sign != 1 && time_sign != -1) throw ConfigError("transport: time sign must be +-1");
    auto chi_ptr = std::make_shared<CutoffField>(chi);
    std::vector<AmplitudeStack::BoundaryAmp> bdata;
    auto cp = chi_ptr;
    bdata.push_back([cp](double t, double th) { return cplx(cp->value(t, th)); });
    return AmplitudeStack::build(tube, std::move(bdata), chi_ptr, order, time_sign, chi.t0(),
                                 chi.time_halfwidth());
}

const CutoffField& AmplitudeStack::cutoff() const {
    if (!chi_) throw ContractError("amplitude stack has no cutoff (reflected data)");
    return *chi_;
}

cplx AmplitudeStack::higher_at(int j, double thr, double tau, double s) const {
    const RayTube& t = *tube_;
    const std::vector<cplx>& f = higher_[static_cast<std::size_t>(j) - 1];
    double fk = std::clamp((thr - thr0_) / dthr_, 0.0, n_thr_ - 1.000001);
    double fm = std::clamp((tau - t.tau0) / t.dtau, 0.0, t.n_tau - 1.000001);
    double fn = std::clamp(s / t.ds, 0.0, t.n_s - 1.000001);
    int k = std::clamp(static_cast<int>(fk), 1, n_thr_ - 3);
    int m = std::clamp(static_cast<int>(fm), 1, t.n_tau - 3);
    int n = std::clamp(static_cast<int>(fn), 1, t.n_s - 3);
    double wk[4], wm[4], wn[4];
    crw(fk - k, wk);
    crw(fm - m, wm);
    crw(fn - n, wn);
    cplx acc = 0.0;
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
            for (int c = 0; c < 4; ++c)
                acc += wk[a] * wm[b] * wn[c] *
                       f[(static_cast<std::size_t>(k + a - 1) * t.n_tau + (m + b - 1)) * t.n_s +
                         (n + c - 1)];
    return acc;
}

cplx AmplitudeStack::value_at(int j, double thr, const TubeCoord& tc) const {
    const RayTube& t = *tube_;
    if (j == 0) {
        double se = t.ray_field(t.s_entry, tc.tau);
        double the = t.ray_field(t.theta_entry, tc.tau);
        double lbe = t.ray_field(t.logb_entry, tc.tau);
        double spread = std::exp(0.5 * (lbe - t.field(t.logb, tc.tau, tc.s)));
        return boundary_data_[0](thr + se, the) * spread;
    }
    if (j > order_) return 0.0;
    return higher_at(j, thr, tc.tau, tc.s);
}

cplx AmplitudeStack::value(int j, double t, Vec2 x) const {
    TubeCoord tc = tube_->locate(x);
    if (!tc.ok) return 0.0;
    return value_at(j, t - tc.s, tc);
}

cplx AmplitudeStack::normal_derivative(int j, double tt, double theta) const {
    const MetricField& g = tube_->g;
    BoundaryFrame fr = boundary_frame(g, theta);
    double h = 1.5e-3;
    cplx acc = 0.0;
    static const double w5[5] = {-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25};
    TraceOptions topt;
    topt.step = 5e-4;
    for (int q = 0; q < 5; ++q) {
        Vec2 p = q == 0 ? fr.point
                        : trace_geodesic(g, fr.point, fr.normal_in, TraceMode::FixedTime, q * h,
                                         topt)
                              .back()
                              .x;
        acc += w5[q] * value(j, tt, p);
    }
    return acc / h;
}

double AmplitudeStack::transport_residual(int n_check) const {
    const RayTube& t = *tube_;
    double worst = 0.0;
    std::uint64_t state = 0xabcdef12u;
    auto next = [&] {
        state = state * 6364136223846793005ull + 1442695040888963407ull;
        return (state >> 11) * (1.0 / 9007199254740992.0);
    };
    double hs = 1e-4;
    for (int k = 0; k < n_check; ++k) {
        double tau = t.tau0 + (0.2 + 0.6 * next()) * (t.n_tau - 1) * t.dtau;
        double se = t.ray_field(t.s_entry, tau);
        double s = se + (0.1 + 0.7 * next()) * ((t.n_s - 1) * t.ds - se);
        Vec2 x{t.field(t.x1, tau, s), t.field(t.x2, tau, s)};
        if (x.norm() > 0.999) continue;
        double tt = t_center_ + (next() - 0.5) * t_halfwidth_ + s - se;
        // L A = 2 dA/dt + 2 g^{ij} phi_i d_j A + (Delta phi) A
        cplx at = (value(0, tt + hs, x) - value(0, tt - hs, x)) / (2 * hs);
        cplx ax = (value(0, tt, x + Vec2{hs, 0}) - value(0, tt, x - Vec2{hs, 0})) / (2 * hs);
        cplx ay = (value(0, tt, x + Vec2{0, hs}) - value(0, tt, x - Vec2{0, hs})) / (2 * hs);
        Vec2 p{t.field(t.p1, tau, s), t.field(t.p2, tau, s)};
        Vec2 w = t.g.inv_at(x).apply(p);
        double lap = t.field(t.lapphi, tau, s);
        cplx la = 2.0 * at + 2.0 * (w.x * ax + w.y * ay) + lap * value(0, tt, x);
        worst = std::max(worst, std::abs(la));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// WKBPacket

WKBPacket::WKBPacket(PhaseField phi, AmplitudeStack stack, double lambda)
    : phi_(std::move(phi)), stack_(std::move(stack)), lambda_(lambda) {
    if (phi_.tube() != stack_.tube_)
        throw ContractError("packet: phase and amplitudes live on different ray tubes");
    if (lambda <= 1.0) throw ConfigError("packet: lambda must exceed 1");
}

WKBPacket assemble_packet(const PhaseField& phi, const AmplitudeStack& stack, double lambda,
                          int time_sign_check) {
    if (time_sign_check != 0 && time_sign_check != stack.time_sign())
        throw ContractError("packet: amplitude stack was built for the other time convention");
    return WKBPacket(phi, stack, lambda);
}

cplx WKBPacket::value(double t, Vec2 x) const {
    TubeCoord tc = phi_.tube()->locate(x);
    if (!tc.ok) return 0.0;
    const RayTube& tube = *phi_.tube();
    double phase_val = tube.ray_field(tube.phi_b, tc.tau) + tc.s;
    double thr = t - tc.s;
    cplx amp = 0.0;
    double lam_pow = 1.0;
    for (int j = 0; j <= stack_.order(); ++j) {
        amp += stack_.value_at(j, thr, tc) * lam_pow;
        lam_pow /= lambda_;
    }
    double ph = lambda_ * stack_.time_sign_ * (t - phase_val);
    return std::polar(1.0, ph) * amp;
}

cplx WKBPacket::boundary_value(double t, double theta) const {
    return value(t, {std::cos(theta), std::sin(theta)});
}

cplx WKBPacket::pde_residual(double t, Vec2 x) const {
    // 6th-order FD in time and space (nested divergence form)
    double ht = 2.0 * pi / (lambda_ * 64.0);
    double hx = ht;
    static const double c6[7] = {1.0 / 90, -3.0 / 20, 1.5, -49.0 / 18, 1.5, -3.0 / 20, 1.0 / 90};
    static const double d6[7] = {-1.0 / 60, 3.0 / 20, -0.75, 0.0, 0.75, -3.0 / 20, 1.0 / 60};
    cplx dtt = 0.0;
    for (int q = -3; q <= 3; ++q) dtt += c6[q + 3] * value(t + q * ht, x);
    dtt /= ht * ht;

    const MetricField& g = phi_.metric();
    auto flux = [&](Vec2 q, int comp) {
        Sym2 gi = g.inv_at(q);
        double sd = std::sqrt(g.at(q).det());
        cplx ux = 0.0, uy = 0.0;
        for (int k = -3; k <= 3; ++k) {
            if (k == 0) continue;
            ux += d6[k + 3] * value(t, q + Vec2{k * hx, 0});
            uy += d6[k + 3] * value(t, q + Vec2{0, k * hx});
        }
        ux /= hx;
        uy /= hx;
        return comp == 0 ? sd * (gi.xx * ux + gi.xy * uy) : sd * (gi.xy * ux + gi.yy * uy);
    };
    cplx div = 0.0;
    for (int k = -3; k <= 3; ++k) {
        if (k == 0) continue;
        div += d6[k + 3] * (flux(x + Vec2{k * hx, 0}, 0) + flux(x + Vec2{0, k * hx}, 1));
    }
    div /= hx;
    cplx lap = div / std::sqrt(g.at(x).det());
    return dtt - lap;
}

BoundaryTrace WKBPacket::boundary_trace(double T, double dt, int n_angular) const {
    if (dt > 2.0 * pi / (lambda_ * 10.0))
        throw ResolutionError("packet trace: fewer than 10 samples per period");
    if (2.0 * pi / n_angular > 2.0 * pi / (lambda_ * 10.0))
        throw ResolutionError("packet trace: fewer than 10 angular nodes per wavelength");
    BoundaryTrace tr;
    tr.kind = BoundaryTrace::Kind::DirichletData;
    tr.dt = dt;
    tr.angles.resize(n_angular);
    for (int j = 0; j < n_angular; ++j) tr.angles[j] = 2.0 * pi * j / n_angular;
    std::size_t nt = static_cast<std::size_t>(std::floor(T / dt)) + 1;
    tr.values.assign(nt * n_angular, 0.0);
    for (std::size_t k = 0; k < nt; ++k)
        for (int j = 0; j < n_angular; ++j) tr.at(k, j) = boundary_value(k * dt, tr.angles[j]);
    return tr;
}

// ---------------------------------------------------------------------------
// reflection

WKBPacket reflect_packet(const MetricField& g, const WKBPacket& incident, double v_center,
                         double v_halfwidth, const RayTubeOptions& opt) {
    const PhaseField& phi_in = incident.phase();
    if (incident.time_sign() != -1)
        throw ContractError("reflect: incident packet must be outgoing e^{i lambda (phi - t)}");

    RayTubeOptions ropt = opt;
    ropt.tau_halfwidth = v_halfwidth;
    int nt = ropt.n_tau;
    std::vector<RayState> launches(nt);
    std::vector<double> taus(nt), phib(nt), mu(nt);
    for (int m = 0; m < nt; ++m) {
        double tau = -v_halfwidth + 2.0 * v_halfwidth * m / (nt - 1);
        double th = v_center + tau;
        Vec2 y{std::cos(th), std::sin(th)};
        Vec2 p = phi_in.grad(y);
        Sym2 gi = g.inv_at(y);
        Vec2 nu{std::cos(th), std::sin(th)};
        Vec2 nuh = nu / std::sqrt(gi.quad(nu));
        double pn = gi.quad(p, nuh);
        if (pn < 0.05)
            throw TransversalityError("reflect: incident rays not exiting transversally on V");
        Vec2 pref = p - nuh * (2.0 * pn);
        launches[m] = {y, pref};
        taus[m] = tau;
        phib[m] = phi_in.value(y);
    }
    for (int m = 0; m < nt; ++m) mu[m] = fd_row_deriv(phib.data(), nt, m, taus[1] - taus[0]);

    PhaseField rphi;
    rphi.kind_ = PhaseField::Kind::PlaneBoundary;
    rphi.theta0_ = v_center;
    rphi.tube_ = build_tube(g, PhaseField::Kind::PlaneBoundary, launches, taus, phib, mu, ropt,
                            false);

    // time support of the incident amplitude on V
    const AmplitudeStack& ast = incident.amplitudes();
    Vec2 yc{std::cos(v_center), std::sin(v_center)};
    double t_probe_lo = 0.0, t_probe_hi = 0.0;
    {
        double tmax = ast.t_center_ + ast.t_halfwidth_ +
                      *std::max_element(phi_in.tube()->phi_b.begin(), phi_in.tube()->phi_b.end()) +
                      (phi_in.tube()->n_s - 1) * phi_in.tube()->ds;
        double best = 0.0;
        int ngrid = 400;
        std::vector<double> mag(ngrid);
        for (int i = 0; i < ngrid; ++i) {
            double tt = tmax * (i + 0.5) / ngrid;
            mag[i] = std::abs(ast.value(0, tt, yc));
            best = std::max(best, mag[i]);
        }
        int lo = 0, hi = ngrid - 1;
        while (lo < ngrid && mag[lo] < 1e-9 * best) ++lo;
        while (hi > 0 && mag[hi] < 1e-9 * best) --hi;
        t_probe_lo = tmax * lo / ngrid;
        t_probe_hi = tmax * (hi + 1.5) / ngrid;
        if (lo >= hi) throw NumericError("reflect: incident amplitude not seen on V");
    }

    // reflected boundary data: B_j|_V = -A_j|_V order by order
    std::vector<AmplitudeStack::BoundaryAmp> bdata;
    auto inc_stack = std::make_shared<AmplitudeStack>(incident.amplitudes());
    for (int j = 0; j <= incident.amplitudes().order(); ++j) {
        bdata.push_back([inc_stack, j](double t, double th) {
            return -inc_stack->value(j, t, {std::cos(th), std::sin(th)});
        });
    }
    AmplitudeStack rstack = AmplitudeStack::build(
        rphi.tube_, std::move(bdata), nullptr, incident.amplitudes().order(), -1,
        0.5 * (t_probe_lo + t_probe_hi), 0.5 * (t_probe_hi - t_probe_lo));
    return WKBPacket(rphi, rstack, incident.lambda());
}

}  // namespace dnlab
