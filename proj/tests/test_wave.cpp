#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dnlab/wave.hpp"

using namespace dnlab;

namespace {

// smooth pulse profile vanishing (to machine level) for s <= 1, so the traces
// of F(t - x.omega) satisfy the t=0 compatibility on the disk
double pulse(double s) { return std::exp(-sq((s - 2.0) / 0.18)); }
double pulse_d(double s) { return pulse(s) * (-2.0 * (s - 2.0) / sq(0.18)); }

SolverGrid small_grid(int na = 96) {
    SolverGrid gr;
    gr.n_angular = na;
    gr.n_radial = na / 2;
    return gr;
}

}  // namespace

TEST_CASE("zero data gives the zero solution") {
    WaveSolver solver(MetricField::euclidean(), small_grid(64));
    WaveRunOptions opt;
    opt.dn_every = 8;
    opt.keep_final_field = true;
    auto res = solver.run([](double, double) { return cplx(0.0); }, 1.0, opt);
    CHECK(res.dn.max_abs() == 0.0);
    for (const cplx& v : res.final_field) CHECK(std::abs(v) == 0.0);
}

TEST_CASE("euclidean plane wave: solution and DN match d'Alembert") {
    MetricField g = MetricField::euclidean();
    Vec2 om{0.6, 0.8};
    double T = 1.8;
    auto data = [&](double t, double th) {
        Vec2 x{std::cos(th), std::sin(th)};
        return cplx(pulse(t - x.dot(om)));
    };

    std::vector<double> errs_u, errs_dn, hs;
    for (int na : {64, 128, 256}) {
        WaveSolver solver(g, small_grid(na));
        WaveRunOptions opt;
        opt.dn_every = 4;
        opt.keep_final_field = true;
        auto res = solver.run(data, T, opt);

        // interior L2 error at t = T
        double num = 0.0, den = 0.0;
        for (int i = 0; i < solver.grid().n_radial - 1; ++i)
            for (int j = 0; j < solver.grid().n_angular; ++j) {
                Vec2 p = solver.node_position(i, j);
                cplx exact = pulse(T - p.dot(om));
                cplx got = res.final_field[static_cast<std::size_t>(i) * solver.grid().n_angular + j];
                num += std::norm(got - exact);
                den += std::norm(exact);
            }
        errs_u.push_back(std::sqrt(num / den));

        // DN error against -(nu . omega) F'(t - x.omega)
        double nnum = 0.0, nden = 0.0;
        for (std::size_t k = 0; k < res.dn.n_time(); ++k)
            for (std::size_t j = 0; j < res.dn.n_boundary(); ++j) {
                double th = res.dn.angles[j];
                Vec2 x{std::cos(th), std::sin(th)};
                double exact = -(x.dot(om)) * pulse_d(res.dn.time_of(k) - x.dot(om));
                nnum += std::norm(res.dn.at(k, j) - exact);
                nden += sq(exact);
            }
        errs_dn.push_back(std::sqrt(nnum / nden));
        hs.push_back(1.0 / na);
    }

    double order_u = std::log(errs_u[0] / errs_u[2]) / std::log(hs[0] / hs[2]);
    double order_dn = std::log(errs_dn[0] / errs_dn[2]) / std::log(hs[0] / hs[2]);
    INFO("u errors ", errs_u[0], " ", errs_u[1], " ", errs_u[2], " order ", order_u);
    INFO("dn errors ", errs_dn[0], " ", errs_dn[1], " ", errs_dn[2], " order ", order_dn);
    CHECK(order_u >= 1.9);
    CHECK(order_dn >= 1.9);
    CHECK(errs_dn[2] < 0.02);  // 2% at the default-or-finer grid
}

TEST_CASE("manufactured solution on a conformal metric converges at order 2") {
    ScalarField c = ScalarField::one_bump(1.0, 0.25, {0.15, -0.1}, 0.45);
    MetricField g = MetricField::conformal(c);
    GaussBump q{1.0, {0.1, 0.2}, 0.5};
    double T = 1.0;

    auto um = [&](double t, Vec2 p) { return (1.0 - std::cos(t)) * q.value(p); };
    auto source = [&](double t, Vec2 p) -> cplx {
        double lap_q = laplace_beltrami(g, p, q.grad(p), q.hess(p));
        return std::cos(t) * q.value(p) - (1.0 - std::cos(t)) * lap_q;
    };
    auto data = [&](double t, double th) -> cplx {
        return um(t, {std::cos(th), std::sin(th)});
    };

    std::vector<double> errs;
    for (int na : {64, 128}) {
        WaveSolver solver(g, small_grid(na));
        WaveRunOptions opt;
        opt.keep_final_field = true;
        opt.source = source;
        auto res = solver.run(data, T, opt);
        double num = 0.0, den = 0.0;
        for (int i = 0; i < solver.grid().n_radial - 1; ++i)
            for (int j = 0; j < solver.grid().n_angular; ++j) {
                Vec2 p = solver.node_position(i, j);
                cplx exact = um(T, p);
                num += std::norm(res.final_field[static_cast<std::size_t>(i) * solver.grid().n_angular + j] - exact);
                den += std::norm(exact);
            }
        errs.push_back(std::sqrt(num / den));
    }
    double order = std::log(errs[0] / errs[1]) / std::log(2.0);
    INFO("mms errors ", errs[0], " ", errs[1], " order ", order);
    CHECK(order >= 1.9);
}

TEST_CASE("discrete energy is conserved after the data switches off") {
    MetricField g = MetricField::perturbed(MetricField::euclidean(), 0.15,
                                           TensorBump::solenoidal(1.0, {0.1, 0.0}, 0.3));
    WaveSolver solver(g, small_grid(96));
    // data supported in t in (0, 0.4)
    auto data = [](double t, double th) -> cplx {
        return bump1((t - 0.2) / 0.2) * std::cos(2.0 * th);
    };
    WaveRunOptions opt;
    opt.energy_watch_from = 0.5;
    auto res = solver.run(data, 0.5 + 1300 * solver.dt(), opt);
    CHECK(res.energy_reference > 0.0);
    CHECK(res.energy_steps >= 1000);
    double drift_per_1000 = res.energy_drift * 1000.0 / res.energy_steps;
    INFO("drift ", res.energy_drift, " over ", res.energy_steps, " steps");
    CHECK(drift_per_1000 < 1e-6);
}

TEST_CASE("finite propagation speed") {
    MetricField g = MetricField::euclidean();
    WaveSolver solver(g, small_grid(128));
    double th0 = 0.0, T = 0.6;
    auto data = [&](double t, double th) -> cplx {
        return bump1((t - 0.25) / 0.25) * bump1(wrap_angle(th - th0) / 0.3);
    };
    WaveRunOptions opt;
    opt.dn_every = 8;
    auto res = solver.run(data, T, opt);
    // nodes whose interior distance from the data patch exceeds max_speed * T
    // (plus a few cells of stencil width) stay silent
    double reach = T * solver.max_speed() + 8.0 * 2.0 * pi / 128.0;
    double worst = 0.0;
    for (std::size_t k = 0; k < res.dn.n_time(); ++k)
        for (std::size_t j = 0; j < res.dn.n_boundary(); ++j) {
            double sep = std::abs(wrap_angle(res.dn.angles[j] - th0)) - 0.3;  // to patch edge
            double chord = 2.0 * std::sin(std::max(0.0, sep) / 2.0);
            if (chord > reach) worst = std::max(worst, std::abs(res.dn.at(k, j)));
        }
    CHECK(worst < 1e-10);
}

TEST_CASE("annulus truncation reproduces the full-disk DN output for short probes") {
    ScalarField c = ScalarField::one_bump(1.0, 0.2, {0.3, 0.1}, 0.4);
    MetricField g = MetricField::conformal(c);
    double T = 0.5;
    auto data = [](double t, double th) -> cplx {
        double carrier = std::cos(24.0 * (t - th));
        return carrier * bump1((t - 0.22) / 0.18) * bump1(wrap_angle(th) / 0.4);
    };

    SolverGrid full = small_grid(128);
    SolverGrid ann = full;
    ann.inner_radius = 0.4;
    ann.n_radial = 64;
    WaveSolver sf(g, full);
    WaveSolver sa(g, ann);
    CHECK(sa.annulus_depth() * 2.0 > T);  // finite-speed margin for this probe

    // the inner Dirichlet ring is never reached within T
    WaveRunOptions wa;
    wa.dn_every = 8;
    wa.watch_ring = 1;
    auto ra = sa.run(data, T, wa);
    CHECK(ra.ring_max < 1e-7);

    BoundaryTrace a = dn_apply(sf, data, T, 8);
    const BoundaryTrace& b = ra.dn;
    // compare at exactly shared sample times (the two dt differ)
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < a.n_time(); ++k) {
        double t = a.time_of(k);
        std::size_t kb = static_cast<std::size_t>(std::round(t / b.dt));
        if (kb >= b.n_time()) continue;
        if (std::abs(b.time_of(kb) - t) > 1e-9) continue;
        for (std::size_t j = 0; j < a.n_boundary(); ++j) {
            num += std::norm(a.at(k, j) - b.at(kb, j));
            den += std::norm(a.at(k, j));
        }
    }
    CHECK(den > 0.0);
    // differences are at the level of the two discretizations, not the truncation
    CHECK(std::sqrt(num / den) < 0.05);
}

TEST_CASE("dirichlet data compatibility is enforced") {
    WaveSolver solver(MetricField::euclidean(), small_grid(64));
    CHECK_THROWS_AS(solver.run([](double, double) { return cplx(1.0); }, 0.5), ValidityError);
}

TEST_CASE("boundary trace csv round trip and probe support validation") {
    BoundaryTrace t;
    t.kind = BoundaryTrace::Kind::DirichletData;
    t.dt = 0.01;
    t.angles = {0.0, pi / 2, pi, 3 * pi / 2};
    t.values.assign(12, 0.0);
    t.at(1, 2) = {0.5, -0.25};
    t.save_csv("trace_rt.csv");
    BoundaryTrace l = BoundaryTrace::load_csv("trace_rt.csv");
    CHECK(l.n_time() == 3);
    CHECK(std::abs(l.at(1, 2) - cplx{0.5, -0.25}) < 1e-12);
    std::remove("trace_rt.csv");

    t.validate_probe_support(0.05);
    t.at(0, 0) = 1.0;
    CHECK_THROWS_AS(t.validate_probe_support(0.05), ValidityError);
}
