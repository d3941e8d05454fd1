#include "dnlab/geodesic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace dnlab {

namespace {

struct PhaseState {
    Vec2 x, v;
};

inline PhaseState rhs(const MetricField& g, const PhaseState& s) {
    Christoffel gam = christoffel(g, s.x);
    Vec2 a{-gam[0].quad(s.v), -gam[1].quad(s.v)};
    return {s.v, a};
}

inline PhaseState axpy(const PhaseState& s, const PhaseState& d, double h) {
    return {s.x + d.x * h, s.v + d.v * h};
}

PhaseState rk4_step(const MetricField& g, const PhaseState& s, double h) {
    PhaseState k1 = rhs(g, s);
    PhaseState k2 = rhs(g, axpy(s, k1, 0.5 * h));
    PhaseState k3 = rhs(g, axpy(s, k2, 0.5 * h));
    PhaseState k4 = rhs(g, axpy(s, k3, h));
    return {s.x + (k1.x + (k2.x + k3.x) * 2.0 + k4.x) * (h / 6.0),
            s.v + (k1.v + (k2.v + k3.v) * 2.0 + k4.v) * (h / 6.0)};
}

// fraction of a step at which |x| crosses radius, by bisection on sub-steps
double refine_crossing(const MetricField& g, const PhaseState& s, double h, double radius) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        PhaseState sm = rk4_step(g, s, mid * h);
        if (sm.x.norm() < radius)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-15) break;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

GeodesicState Geodesic::at_time(double t) const {
    if (states.empty()) throw ContractError("geodesic: empty trace");
    if (t <= states.front().t) return states.front();
    if (t >= states.back().t) return states.back();
    auto it = std::lower_bound(states.begin(), states.end(), t,
                               [](const GeodesicState& s, double tt) { return s.t < tt; });
    const GeodesicState& b = *it;
    const GeodesicState& a = *(it - 1);
    double w = (t - a.t) / (b.t - a.t);
    return {a.x + (b.x - a.x) * w, a.v + (b.v - a.v) * w, t};
}

Geodesic trace_geodesic(const MetricField& g, Vec2 x0, Vec2 v0, TraceMode mode, double fixed_time,
                        const TraceOptions& opt) {
    if (v0.norm() == 0.0) throw DomainError("trace_geodesic: zero initial velocity");
    if (mode == TraceMode::UntilExit && x0.norm() > opt.outer_radius + 1e-12)
        throw DomainError("trace_geodesic: start outside the domain");

    Geodesic geo;
    geo.entry = x0;
    PhaseState s{x0, v0};
    double e0 = g.at(s.x).quad(s.v);
    double t = 0.0;
    double h = opt.step;
    double t_end = mode == TraceMode::FixedTime ? fixed_time : opt.max_time;
    geo.states.push_back({s.x, s.v, 0.0});
    int step_count = 0;

    while (t < t_end - 1e-15) {
        double hs = std::min(h, t_end - t);
        PhaseState next = rk4_step(g, s, hs);
        if (mode == TraceMode::UntilExit && next.x.norm() >= opt.outer_radius) {
            double frac = refine_crossing(g, s, hs, opt.outer_radius);
            s = rk4_step(g, s, frac * hs);
            t += frac * hs;
            geo.states.push_back({s.x, s.v, t});
            geo.exited = true;
            break;
        }
        s = next;
        t += hs;
        ++step_count;
        if (step_count % opt.store_every == 0 || t >= t_end - 1e-15)
            geo.states.push_back({s.x, s.v, t});
        if (s.x.norm() > 5.0)
            throw GeometryError("trace_geodesic: trajectory left the extended neighborhood");
        double e = g.at(s.x).quad(s.v);
        geo.energy_drift = std::max(geo.energy_drift, std::abs(e - e0) / e0);
    }

    if (mode == TraceMode::UntilExit && !geo.exited)
        throw GeometryError("trace_geodesic: trapped ray (no boundary exit before max arc length " +
                            std::to_string(opt.max_time) + ")");

    geo.exit = geo.states.back().x;
    geo.exit_velocity = geo.states.back().v;
    geo.length = std::sqrt(e0) * geo.states.back().t;
    return geo;
}

Vec2 exp_map(const MetricField& g, Vec2 x, Vec2 v, const TraceOptions& opt) {
    if (v.norm() == 0.0) return x;
    Geodesic geo = trace_geodesic(g, x, v, TraceMode::FixedTime, 1.0, opt);
    return geo.back().x;
}

BoundaryFrame boundary_frame(const MetricField& g, double theta) {
    Vec2 p{std::cos(theta), std::sin(theta)};
    Vec2 nu{std::cos(theta), std::sin(theta)};  // outward conormal (covector)
    Sym2 ginv = g.inv_at(p);
    Vec2 n_raw = ginv.apply(nu);
    double nn = nu.dot(n_raw);
    Vec2 normal_in = n_raw * (-1.0 / std::sqrt(nn));
    Vec2 te{-std::sin(theta), std::cos(theta)};
    Vec2 tangent = te / std::sqrt(g.at(p).quad(te));
    return {p, normal_in, tangent};
}

namespace {

struct ExitSample {
    double psi;
    double exit_angle_diff;  // wrapped exit angle minus target
    double length;
    Vec2 exit;
    bool ok;
};

ExitSample launch(const MetricField& g, const BoundaryFrame& fr, double theta_y, double psi,
                  const TraceOptions& opt) {
    Vec2 v = fr.normal_in * std::cos(psi) + fr.tangent * std::sin(psi);
    ExitSample es;
    es.psi = psi;
    es.ok = false;
    try {
        Geodesic geo = trace_geodesic(g, fr.point, v, TraceMode::UntilExit, 0.0, opt);
        double ang = std::atan2(geo.exit.y, geo.exit.x);
        es.exit_angle_diff = wrap_angle(ang - theta_y);
        es.length = geo.length;
        es.exit = geo.exit;
        es.ok = true;
    } catch (const GeometryError&) {
    }
    return es;
}

}  // namespace

ShootResult shoot_boundary_geodesic(const MetricField& g, double theta_x, double theta_y,
                                    const TraceOptions& opt, double tol) {
    Vec2 target{std::cos(theta_y), std::sin(theta_y)};
    BoundaryFrame fr = boundary_frame(g, theta_x);
    if (std::abs(wrap_angle(theta_x - theta_y)) < 1e-12)
        return {0.0, 0.0, fr.point, 0.0};

    TraceOptions lopt = opt;
    lopt.store_every = 64;  // shooting only needs the endpoint

    const double margin = 0.02;
    const int n_scan = 33;
    ExitSample best_lo, best_hi;
    bool have_bracket = false;

    ExitSample prev;
    prev.ok = false;
    for (int i = 0; i < n_scan; ++i) {
        double psi = -pi / 2 + margin + (pi - 2 * margin) * i / (n_scan - 1);
        ExitSample cur = launch(g, fr, theta_y, psi, lopt);
        if (prev.ok && cur.ok && prev.exit_angle_diff * cur.exit_angle_diff <= 0.0 &&
            std::abs(prev.exit_angle_diff) < pi / 2 && std::abs(cur.exit_angle_diff) < pi / 2) {
            best_lo = prev;
            best_hi = cur;
            have_bracket = true;
            break;
        }
        prev = cur;
    }
    if (!have_bracket)
        throw GeometryError("boundary shooting: failed to bracket the exit angle (trapped or "
                            "non-simple metric?)");

    // bisection on the wrapped exit-angle mismatch
    ExitSample lo = best_lo, hi = best_hi, mid;
    for (int it = 0; it < 48; ++it) {
        double psi = 0.5 * (lo.psi + hi.psi);
        mid = launch(g, fr, theta_y, psi, lopt);
        if (!mid.ok) throw GeometryError("boundary shooting: ray trapped during bisection");
        if ((mid.exit_angle_diff > 0) == (lo.exit_angle_diff > 0))
            lo = mid;
        else
            hi = mid;
        if ((mid.exit - target).norm() < tol * 0.1) break;
    }
    ExitSample fin = std::abs(lo.exit_angle_diff) < std::abs(hi.exit_angle_diff) ? lo : hi;
    double residual = (fin.exit - target).norm();
    if (residual > tol) {
        std::ostringstream os;
        os << "boundary shooting: residual " << residual << " above tolerance " << tol;
        throw NumericError(os.str());
    }
    return {fin.length, fin.psi, fin.exit, residual};
}

double boundary_distance(const MetricField& g, double theta_x, double theta_y,
                         const TraceOptions& opt) {
    return shoot_boundary_geodesic(g, theta_x, theta_y, opt).length;
}

double BoundaryDistanceTable::max_value() const {
    return dist.empty() ? 0.0 : *std::max_element(dist.begin(), dist.end());
}

double BoundaryDistanceTable::max_abs_diff(const BoundaryDistanceTable& other) const {
    if (other.dist.size() != dist.size())
        throw ContractError("distance tables: mismatched angle grids");
    double m = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) m = std::max(m, std::abs(dist[i] - other.dist[i]));
    return m;
}

void BoundaryDistanceTable::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    char buf[64];
    out << "angle";
    for (double a : angles) {
        std::snprintf(buf, sizeof buf, ",%.12g", a);
        out << buf;
    }
    out << "\n";
    for (std::size_t i = 0; i < angles.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.12g", angles[i]);
        out << buf;
        for (std::size_t j = 0; j < angles.size(); ++j) {
            std::snprintf(buf, sizeof buf, ",%.12g", at(i, j));
            out << buf;
        }
        out << "\n";
    }
}

BoundaryDistanceTable BoundaryDistanceTable::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open distance table: " + path);
    BoundaryDistanceTable t;
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty distance table: " + path);
    std::stringstream hs(line);
    std::string tok;
    std::getline(hs, tok, ',');  // "angle"
    while (std::getline(hs, tok, ',')) t.angles.push_back(std::stod(tok));
    t.dist.resize(t.angles.size() * t.angles.size());
    for (std::size_t i = 0; i < t.angles.size(); ++i) {
        if (!std::getline(in, line)) throw ConfigError("truncated distance table: " + path);
        std::stringstream rs(line);
        std::getline(rs, tok, ',');
        for (std::size_t j = 0; j < t.angles.size(); ++j) {
            std::getline(rs, tok, ',');
            t.at(i, j) = std::stod(tok);
        }
    }
    return t;
}

BoundaryDistanceTable build_distance_table(const MetricField& g, int n_angles,
                                           const TraceOptions& opt, int jobs) {
    BoundaryDistanceTable t;
    t.metric_fingerprint = g.fingerprint();
    t.angles.resize(n_angles);
    for (int i = 0; i < n_angles; ++i) t.angles[i] = 2.0 * pi * i / n_angles;
    t.dist.assign(static_cast<std::size_t>(n_angles) * n_angles, 0.0);

    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < n_angles; ++i)
        for (int j = i + 1; j < n_angles; ++j) pairs.emplace_back(i, j);

    parallel_for(pairs.size(), [&](std::size_t k) {
        auto [i, j] = pairs[k];
        double d = boundary_distance(g, t.angles[i], t.angles[j], opt);
        t.at(i, j) = d;
        t.at(j, i) = d;
    }, jobs);
    return t;
}

SimplicityReport simplicity_check(const MetricField& g, int boundary_samples, int ray_fan,
                                  const TraceOptions& opt) {
    SimplicityReport rep;

    // strict convexity: second fundamental form of the boundary circle w.r.t. g
    double margin = 1e30;
    for (int i = 0; i < boundary_samples; ++i) {
        double th = 2.0 * pi * i / boundary_samples;
        Vec2 p{std::cos(th), std::sin(th)};
        Vec2 T{-std::sin(th), std::cos(th)};
        Vec2 dT{-std::cos(th), -std::sin(th)};
        Christoffel gam = christoffel(g, p);
        Vec2 covT{dT.x + gam[0].quad(T), dT.y + gam[1].quad(T)};
        BoundaryFrame fr = boundary_frame(g, th);
        double ii = g.at(p).quad(covT, fr.normal_in) / g.at(p).quad(T);
        margin = std::min(margin, ii);
    }
    rep.convexity_margin = margin;

    // conjugate points along a fan of geodesics: J'' + K J = 0, J(0)=0, J'(0)=1
    TraceOptions jopt = opt;
    jopt.step = std::max(opt.step, 2e-3);
    for (int i = 0; i < boundary_samples && !rep.conjugate_point_found; ++i) {
        double th = 2.0 * pi * i / boundary_samples;
        BoundaryFrame fr = boundary_frame(g, th);
        for (int k = 0; k < ray_fan && !rep.conjugate_point_found; ++k) {
            double psi = -1.25 + 2.5 * k / (ray_fan - 1);
            Vec2 v = fr.normal_in * std::cos(psi) + fr.tangent * std::sin(psi);
            PhaseState s{fr.point, v};
            double J = 0.0, Jp = 1.0, t = 0.0;
            while (t < jopt.max_time) {
                double K = gauss_curvature(g, s.x);
                // one RK4 step of the joint system, curvature frozen within the step
                double h = jopt.step;
                auto jac = [&](double j, double jp) { return std::pair{jp, -K * j}; };
                auto [k1a, k1b] = jac(J, Jp);
                auto [k2a, k2b] = jac(J + 0.5 * h * k1a, Jp + 0.5 * h * k1b);
                auto [k3a, k3b] = jac(J + 0.5 * h * k2a, Jp + 0.5 * h * k2b);
                auto [k4a, k4b] = jac(J + h * k3a, Jp + h * k3b);
                J += h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a);
                Jp += h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b);
                s = rk4_step(g, s, h);
                t += h;
                if (s.x.norm() >= 1.0) break;
                if (t > 10 * h && J <= 0.0) {
                    rep.conjugate_point_found = true;
                    rep.conjugate_location = s.x;
                    rep.conjugate_time = t;
                    break;
                }
            }
        }
    }

    // two-point uniqueness on a small pair grid with multi-start shooting
    const int n_pairs = 6;
    for (int i = 0; i < n_pairs && rep.shooting_unique; ++i) {
        double ta = 2.0 * pi * i / n_pairs;
        double tb = ta + pi * (0.35 + 0.4 * i / n_pairs);
        std::vector<double> lengths;
        BoundaryFrame fr = boundary_frame(g, ta);
        TraceOptions lopt = opt;
        lopt.store_every = 64;
        for (int r = 0; r < 8; ++r) {
            double psi0 = -pi / 2 + 0.05 + (pi - 0.1) * r / 7.0;
            // local secant iteration from each restart
            double psi = psi0, psi_prev = psi0 + 0.05;
            ExitSample cur = launch(g, fr, tb, psi, lopt);
            ExitSample prev = launch(g, fr, tb, psi_prev, lopt);
            for (int it = 0; it < 40 && cur.ok && prev.ok; ++it) {
                double denom = cur.exit_angle_diff - prev.exit_angle_diff;
                if (std::abs(denom) < 1e-14) break;
                double nxt = cur.psi - cur.exit_angle_diff * (cur.psi - prev.psi) / denom;
                nxt = std::clamp(nxt, -pi / 2 + 0.02, pi / 2 - 0.02);
                prev = cur;
                cur = launch(g, fr, tb, nxt, lopt);
                if (cur.ok && std::abs(cur.exit_angle_diff) < 1e-9) break;
            }
            if (cur.ok && std::abs(cur.exit_angle_diff) < 1e-7) lengths.push_back(cur.length);
        }
        for (double l : lengths)
            if (std::abs(l - lengths.front()) > 1e-5) rep.shooting_unique = false;
    }

    rep.simple = rep.convexity_margin > 0.0 && !rep.conjugate_point_found && rep.shooting_unique;
    std::ostringstream os;
    os << "convexity margin " << rep.convexity_margin;
    if (rep.conjugate_point_found)
        os << "; conjugate point near (" << rep.conjugate_location.x << ","
           << rep.conjugate_location.y << ") at t=" << rep.conjugate_time;
    if (!rep.shooting_unique) os << "; non-unique shooting solutions";
    rep.detail = os.str();
    return rep;
}

}  // namespace dnlab
