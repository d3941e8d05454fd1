#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dnlab/geodesic.hpp"
#include "dnlab/wkb.hpp"

using namespace dnlab;

namespace {

MetricField conformal_bump(double amp = 0.25, Vec2 c = {0.25, 0.1}, double sigma = 0.4) {
    return MetricField::conformal(ScalarField::one_bump(1.0, amp, c, sigma));
}

// inward g-unit covector at the boundary angle theta0 with prescribed
// tangential pairing fraction: omega = a*T_cov + b*(-nu), g-unit
Vec2 probe_covector(const MetricField& g, double theta0, double tangential) {
    Vec2 x0{std::cos(theta0), std::sin(theta0)};
    Sym2 gi = g.inv_at(theta0 == 0 ? x0 : x0);
    Vec2 nu{std::cos(theta0), std::sin(theta0)};
    Vec2 tcov{-std::sin(theta0), std::cos(theta0)};
    // build omega = alpha * tcov - beta * nu with g^{-1}(omega,omega) = 1 and
    // the tangential part fixed in the g-orthonormal covector frame
    Vec2 nuh = nu / std::sqrt(gi.quad(nu));
    // orthogonalize tcov against nuh in the g^{-1} inner product
    Vec2 tperp = tcov - nuh * gi.quad(tcov, nuh);
    Vec2 th = tperp / std::sqrt(gi.quad(tperp));
    double beta = std::sqrt(1.0 - tangential * tangential);
    return th * tangential - nuh * beta;
}

}  // namespace

TEST_CASE("plane eikonal: flat phase is exact") {
    MetricField g = MetricField::euclidean();
    Vec2 om{-0.8, 0.6};  // inward at theta0 = 0, omega_1 = 0.6
    PhaseField phi = PhaseField::plane(g, 0.0, om);
    CHECK(phi.eikonal_residual() < 1e-10);
    for (Vec2 x : {Vec2{0.9, 0.05}, Vec2{0.7, -0.2}, Vec2{0.5, 0.3}}) {
        CHECK(phi.value(x) == doctest::Approx(x.dot(om)).epsilon(1e-9));
        CHECK((phi.grad(x) - om).norm() < 1e-9);
        CHECK(std::abs(phi.laplacian(x)) < 1e-7);
    }
    // Eq.-style boundary normal derivative: (1 - omega_1^2)^{1/2} = 0.8
    CHECK(phi.normal_derivative(0.0) == doctest::Approx(0.8).epsilon(1e-8));
}

TEST_CASE("plane eikonal: curved metric satisfies the equation on the patch") {
    MetricField g = conformal_bump();
    Vec2 om = probe_covector(g, 0.3, 0.5);
    PhaseField phi = PhaseField::plane(g, 0.3, om);
    CHECK(phi.eikonal_residual() < 1e-5);
    // boundary values x . omega reproduced along the patch
    for (double tau : {-0.2, 0.0, 0.15}) {
        Vec2 b{std::cos(0.3 + tau), std::sin(0.3 + tau)};
        CHECK(phi.value(b) == doctest::Approx(b.dot(om)).epsilon(1e-7));
    }
}

TEST_CASE("plane eikonal: tangential codirection is rejected") {
    MetricField g = MetricField::euclidean();
    CHECK_THROWS_AS(PhaseField::plane(g, 0.0, Vec2{0.0, 1.0}), TransversalityError);
    CHECK_THROWS_AS(PhaseField::plane(g, 0.0, Vec2{0.8, 0.6}), TransversalityError);  // outward
}

TEST_CASE("point eikonal: flat and scaled-flat distances") {
    Vec2 z0{-1.4, 0.0};
    RayTubeOptions opt;
    opt.tau_halfwidth = 0.62;
    opt.s_max = 2.8;
    opt.n_s = 281;
    MetricField e = MetricField::euclidean();
    PhaseField pe = PhaseField::point(e, z0, opt);
    for (Vec2 x : {Vec2{0.0, 0.0}, Vec2{0.5, 0.2}, Vec2{-0.3, -0.4}}) {
        CHECK(pe.value(x) == doctest::Approx((x - z0).norm()).epsilon(1e-7));
        Vec2 dir = (x - z0) / (x - z0).norm();
        CHECK((pe.grad(x) - dir).norm() < 1e-6);
    }
    MetricField c2 = MetricField::conformal(ScalarField::constant(2.0));
    RayTubeOptions opt2 = opt;
    opt2.s_max = 5.2;
    opt2.n_s = 521;
    PhaseField pc = PhaseField::point(c2, z0, opt2);
    for (Vec2 x : {Vec2{0.1, 0.1}, Vec2{0.4, -0.3}})
        CHECK(pc.value(x) == doctest::Approx(2.0 * (x - z0).norm()).epsilon(1e-7));
    CHECK(pc.eikonal_residual() < 1e-5);
}

TEST_CASE("point eikonal: gradient follows the geodesic from the source") {
    MetricField g = conformal_bump(0.2, {0.1, -0.1}, 0.45);
    Vec2 z0{1.35, 0.4};
    RayTubeOptions opt;
    opt.tau_halfwidth = 0.6;
    opt.s_max = 3.2;
    opt.n_s = 321;
    PhaseField phi = PhaseField::point(g, z0, opt);
    CHECK(phi.eikonal_residual() < 1e-5);
    Vec2 x{-0.2, 0.1};
    TubeCoord tc = phi.locate(x);
    REQUIRE(tc.ok);
    // independent retrace of the located ray
    Vec2 e{std::cos(tc.tau), std::sin(tc.tau)};
    Vec2 v0 = e / std::sqrt(g.at(z0).quad(e));
    TraceOptions topt;
    topt.step = 5e-4;
    Geodesic geo = trace_geodesic(g, z0, v0, TraceMode::FixedTime, tc.s, topt);
    CHECK((geo.back().x - x).norm() < 1e-6);
    Vec2 p_expect = g.at(x).apply(geo.back().v);
    CHECK((phi.grad(x) - p_expect).norm() < 1e-5);
}

TEST_CASE("transport: flat plane phase with plateau cutoff") {
    MetricField g = MetricField::euclidean();
    Vec2 om{-0.8, 0.6};
    PhaseField phi = PhaseField::plane(g, 0.0, om);
    CutoffField chi = CutoffField::product(0.4, 0.25, 0.0, 0.35);
    AmplitudeStack st = solve_transport(phi, chi, 1);

    // on the plateau cone A_0 = 1 and A_1 = 0
    for (double s : {0.1, 0.3, 0.5}) {
        TubeCoord tc;
        tc.tau = 0.0;
        tc.s = s;
        tc.ok = true;
        CHECK(std::abs(st.value_at(0, 0.4, tc) - 1.0) < 1e-9);
        CHECK(std::abs(st.value_at(1, 0.4, tc)) < 1e-6);
    }
    // A_1 boundary condition is exact
    CHECK(std::abs(st.value(1, 0.4, {std::cos(0.1), std::sin(0.1)})) < 1e-9);
    CHECK(st.transport_residual() < 1e-4);
}

TEST_CASE("transport: A_0 matches the along-ray quadrature oracle") {
    MetricField g = conformal_bump();
    Vec2 om = probe_covector(g, 0.0, 0.4);
    PhaseField phi = PhaseField::plane(g, 0.0, om);
    CutoffField chi = CutoffField::product(0.4, 0.25, 0.0, 0.35);
    AmplitudeStack st = solve_transport(phi, chi, 0);

    // independent Delta phi via FD divergence of the phase gradient
    auto lap_fd = [&](Vec2 q) {
        double h = 1e-4;
        auto flux = [&](Vec2 r, int comp) {
            Sym2 gi = g.inv_at(r);
            double sd = std::sqrt(g.at(r).det());
            Vec2 p = phi.grad(r);
            Vec2 w = gi.apply(p);
            return comp == 0 ? sd * w.x : sd * w.y;
        };
        double div = (flux(q + Vec2{h, 0}, 0) - flux(q - Vec2{h, 0}, 0)) / (2 * h) +
                     (flux(q + Vec2{0, h}, 1) - flux(q - Vec2{0, h}, 1)) / (2 * h);
        return div / std::sqrt(g.at(q).det());
    };

    // ratio oracle between two points on the same ray: Simpson quadrature of
    // the independent Delta phi over [s_a, s_b]
    TubeCoord probe = phi.locate({0.62, 0.12});
    REQUIRE(probe.ok);
    double s_a = 0.04, s_b = probe.s;
    int nq = 64;
    double hq = (s_b - s_a) / nq;
    double acc = 0.0;
    for (int q = 0; q <= nq; ++q) {
        TubeCoord tc;
        tc.tau = probe.tau;
        tc.s = s_a + hq * q;
        tc.ok = true;
        double w = (q == 0 || q == nq) ? 1.0 : (q % 2 ? 4.0 : 2.0);
        acc += w * lap_fd(phi.position(tc));
    }
    acc *= hq / 3.0;

    TubeCoord tca;
    tca.tau = probe.tau;
    tca.s = s_a;
    tca.ok = true;
    cplx a_far = st.value_at(0, 0.4, probe);
    cplx a_near = st.value_at(0, 0.4, tca);
    double expect_ratio = std::exp(-0.5 * acc);
    CHECK(std::abs(a_far / a_near - expect_ratio) < 1e-5);
}

TEST_CASE("packet: boundary modulus, periodicity, residual decay order") {
    MetricField g = MetricField::euclidean();
    Vec2 om{-0.8, 0.6};
    PhaseField phi = PhaseField::plane(g, 0.0, om);
    CutoffField chi = CutoffField::product(0.4, 0.25, 0.0, 0.35);

    {
        AmplitudeStack st = solve_transport(phi, chi, 1);
        WKBPacket pk = assemble_packet(phi, st, 40.0);
        for (double th : {-0.1, 0.0, 0.12}) {
            cplx u = pk.boundary_value(0.42, th);
            CHECK(std::abs(std::abs(u) - chi.value(0.42, th)) < 1e-6);
        }
        // carrier periodicity on the plateau (principal term: flat envelope)
        WKBPacket pk0 = assemble_packet(phi, solve_transport(phi, chi, 0), 40.0);
        Vec2 x{0.93, 0.02};
        double period = 2.0 * pi / 40.0;
        CHECK(std::abs(pk0.value(0.42 + period, x) - pk0.value(0.42, x)) < 1e-8);
    }

    // residual decay order >= N - 0.5 for N in {0,1,2}
    MetricField gc = conformal_bump(0.15, {0.3, 0.05}, 0.45);
    Vec2 omc = probe_covector(gc, 0.0, 0.4);
    PhaseField phic = PhaseField::plane(gc, 0.0, omc);
    std::vector<double> lambdas{20.0, 40.0, 80.0};
    for (int N : {0, 1, 2}) {
        AmplitudeStack st = solve_transport(phic, chi, N);
        std::vector<double> res;
        for (double lam : lambdas) {
            WKBPacket pk = assemble_packet(phic, st, lam);
            double worst = 0.0;
            for (Vec2 x : {Vec2{0.85, 0.03}, Vec2{0.75, -0.05}})
                worst = std::max(worst, std::abs(pk.pde_residual(0.4 + (0.95 - x.norm()), x)));
            res.push_back(worst);
        }
        PowerFit fit = fit_power_law(lambdas, res);
        INFO("N=", N, " residuals ", res[0], " ", res[1], " ", res[2], " slope ", fit.exponent);
        CHECK(-fit.exponent >= N - 0.5);
    }
}

TEST_CASE("probe support: radii, plateau, gradient scale") {
    MetricField g = MetricField::euclidean();
    CutoffField c1 = build_probe_support(g, 0.0, 0.5, 1.0, 0.5, 1.0);
    CHECK(c1.radius() == doctest::Approx(1.0));
    CHECK(c1.value(0.5, 0.0) == 1.0);
    CHECK(c1.value(0.5 + 0.2, 0.25) == 1.0);   // d = 0.45 < 1/2
    CHECK(c1.value(0.5 + 0.6, 0.55) == 0.0);   // d = 1.15 > 1

    CutoffField c2 = build_probe_support(g, 0.0, 0.5, 1e-2, 0.5, 2.0);
    CHECK(c2.radius() == doctest::Approx(std::pow(1e-2, 0.25) / 2.0).epsilon(1e-12));

    // gradient of the quintic profile: each component <= 4/r, l1 sum <= 8/r
    double grad = c2.max_gradient();
    CHECK(grad <= 8.0 / c2.radius());
    CHECK(grad >= 2.0 / c2.radius());  // sanity: it does scale like 1/r
}

TEST_CASE("reflection: flat mirror retrace and boundary cancellation") {
    MetricField g = MetricField::euclidean();
    Vec2 z0{-1.45, 0.0};
    RayTubeOptions opt;
    opt.tau_halfwidth = 0.35;
    opt.s_max = 3.0;
    opt.n_s = 301;
    PhaseField phi = PhaseField::point(g, z0, opt);
    CutoffField chi = CutoffField::travel(g, pi, 0.3, 0.15, 0.5, 3.0);

    AmplitudeStack a0 = solve_transport(phi, chi, 0, -1);
    AmplitudeStack a1 = solve_transport(phi, chi, 1, -1);

    RayTubeOptions ropt;
    ropt.tau_halfwidth = 0.3;
    ropt.s_max = 0.35;  // stay short of the concave-mirror focus
    ropt.n_s = 71;

    std::vector<double> lambdas{30.0, 60.0, 120.0};
    std::vector<double> wnorm;
    for (double lam : lambdas) {
        WKBPacket u = assemble_packet(phi, a1, lam);
        // reflected packet built from the principal order only
        WKBPacket u0 = assemble_packet(phi, a0, lam);
        WKBPacket v = reflect_packet(g, u0, 0.0, 0.3, ropt);

        // reflected phase on the incident axis: 2 phi(x_V) - phi(x)
        double phiV = phi.value({1.0, 0.0});
        for (double a : {0.95, 0.85}) {
            CHECK(v.phase().value({a, 0.0}) ==
                  doctest::Approx(2.0 * phiV - phi.value({a, 0.0})).epsilon(1e-7));
        }
        // B = -A exactly on V
        double tv = 0.3 + phiV - phi.value({std::cos(pi - 0.01), std::sin(pi - 0.01)}) + 2.4;
        (void)tv;
        double t_probe = 0.3 + (phiV - 0.45);  // packet center arrival at V
        for (double th : {-0.05, 0.0, 0.08}) {
            cplx A = a0.value(0, t_probe, {std::cos(th), std::sin(th)});
            cplx B = v.amplitudes().value(0, t_probe, {std::cos(th), std::sin(th)});
            CHECK(std::abs(A + B) < 1e-6);
        }
        // tangential derivative of the phases agree on V
        double h = 1e-4;
        for (double th : {-0.1, 0.05}) {
            auto bp = [&](double a) { return Vec2{std::cos(a), std::sin(a)}; };
            double dphi = (phi.value(bp(th + h)) - phi.value(bp(th - h))) / (2 * h);
            double dref = (v.phase().value(bp(th + h)) - v.phase().value(bp(th - h))) / (2 * h);
            CHECK(dphi == doctest::Approx(dref).epsilon(1e-6));
        }
        // |u + v| on V decays like 1/lambda (the lambda^-1 A_1 term survives)
        double worst = 0.0;
        for (double th : {-0.06, 0.0, 0.06}) {
            for (double dt = -0.05; dt <= 0.05; dt += 0.025) {
                cplx w = u.boundary_value(t_probe + dt, th) + v.boundary_value(t_probe + dt, th);
                worst = std::max(worst, std::abs(w));
            }
        }
        wnorm.push_back(worst);
    }
    PowerFit fit = fit_power_law(lambdas, wnorm);
    INFO("w on V: ", wnorm[0], " ", wnorm[1], " ", wnorm[2], " slope ", fit.exponent);
    CHECK(-fit.exponent >= 0.9);
}

TEST_CASE("packet exports a boundary trace in the common schema") {
    MetricField g = MetricField::euclidean();
    PhaseField phi = PhaseField::plane(g, 0.0, {-0.8, 0.6});
    CutoffField chi = CutoffField::product(0.3, 0.15, 0.0, 0.3);
    WKBPacket pk = assemble_packet(phi, solve_transport(phi, chi, 0), 25.0);
    BoundaryTrace tr = pk.boundary_trace(0.6, 0.006, 256);
    CHECK(tr.n_boundary() == 256);
    CHECK(tr.n_time() == 101);
    tr.validate_probe_support(0.5);
    CHECK_THROWS_AS(pk.boundary_trace(0.6, 0.2, 256), ResolutionError);
}
