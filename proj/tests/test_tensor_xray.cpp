#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "dnlab/tensor_xray.hpp"

using namespace dnlab;

namespace {

MetricField curved() {
    return MetricField::conformal(ScalarField::one_bump(1.0, 0.2, {0.15, -0.1}, 0.45));
}

// analytic vector field vanishing on the boundary, with derivatives
struct TestField {
    double cx, cy, s, a1, a2;
    Vec2 v(Vec2 p) const {
        double b = std::exp(-(sq(p.x - cx) + sq(p.y - cy)) / (2 * s * s));
        double cut = sq(1.0 - p.norm2());
        return {a1 * b * cut, a2 * b * cut};
    }
    Mat2 dv(Vec2 p) const {
        double h = 1e-6;
        Vec2 dx = (v(p + Vec2{h, 0}) - v(p - Vec2{h, 0})) / (2 * h);
        Vec2 dy = (v(p + Vec2{0, h}) - v(p - Vec2{0, h})) / (2 * h);
        return {dx.x, dx.y, dy.x, dy.y};
    }
};

}  // namespace

TEST_CASE("xray of the identity tensor along a flat chord is its length") {
    MetricField g = MetricField::euclidean();
    SymmetricTensorField f = SymmetricTensorField::constant(Sym2::identity());
    Geodesic chord = trace_geodesic(g, {-1.0, 0.0}, {1.0, 0.0}, TraceMode::UntilExit);
    CHECK(xray_transform(g, f, chord) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("xray annihilates potentials (flat and curved)") {
    for (const MetricField& g : {MetricField::euclidean(), curved()}) {
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<double> u(-0.4, 0.4);
        for (int k = 0; k < 10; ++k) {
            TestField tf{u(rng), u(rng), 0.3 + 0.1 * std::abs(u(rng)), 1.0 + u(rng), u(rng) - 0.4};
            SymmetricTensorField dsv = symmetric_differential(
                g, [&](Vec2 p) { return tf.v(p); }, [&](Vec2 p) { return tf.dv(p); }, 97);
            for (double th : {0.3, 2.0}) {
                BoundaryFrame fr = boundary_frame(g, th);
                Vec2 dir = fr.normal_in * std::cos(0.4) + fr.tangent * std::sin(0.4);
                Geodesic geo = trace_geodesic(g, fr.point, dir, TraceMode::UntilExit);
                double val = xray_transform(g, dsv, geo);
                CHECK(std::abs(val) < 1e-6 * geo.length);
            }
        }
    }
}

TEST_CASE("xray linearity and quadrature self-convergence") {
    MetricField g = curved();
    TensorBump b1 = TensorBump::solenoidal(1.0, {0.1, 0.2}, 0.3);
    TensorBump b2 = TensorBump::plain(Sym2{0.3, -0.2, 0.5}, {-0.2, 0.1}, 0.4);
    SymmetricTensorField f1 = SymmetricTensorField::from_bump(b1, 97);
    SymmetricTensorField f2 = SymmetricTensorField::from_bump(b2, 97);
    SymmetricTensorField fsum = SymmetricTensorField::from_function(
        [&](Vec2 p) { return b1.value(p) * 0.7 + b2.value(p) * (-1.3); }, 97);

    BoundaryFrame fr = boundary_frame(g, 1.1);
    Vec2 dir = fr.normal_in * std::cos(-0.3) + fr.tangent * std::sin(-0.3);
    TraceOptions fine;
    fine.step = 5e-4;
    Geodesic geo = trace_geodesic(g, fr.point, dir, TraceMode::UntilExit, 0.0, fine);
    double lhs = xray_transform(g, fsum, geo);
    double rhs = 0.7 * xray_transform(g, f1, geo) - 1.3 * xray_transform(g, f2, geo);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8));

    // Richardson-refined quadrature oracle
    TraceOptions half = fine;
    half.step = 2.5e-4;
    Geodesic geo2 = trace_geodesic(g, fr.point, dir, TraceMode::UntilExit, 0.0, half);
    CHECK(std::abs(xray_transform(g, f1, geo) - xray_transform(g, f1, geo2)) < 1e-8);
}

TEST_CASE("symmetric differential: flat partials and Killing rotation") {
    MetricField e = MetricField::euclidean();
    SymmetricTensorField d1 = symmetric_differential(
        e, [](Vec2 p) { return Vec2{p.x * p.x, 0.0}; },
        [](Vec2 p) { return Mat2{2 * p.x, 0, 0, 0}; }, 65);
    for (Vec2 p : {Vec2{0.3, 0.2}, Vec2{-0.5, 0.4}}) {
        Sym2 v = d1.at(p);
        CHECK(v.xx == doctest::Approx(2 * p.x).epsilon(1e-6));
        CHECK(std::abs(v.xy) < 1e-8);
        CHECK(std::abs(v.yy) < 1e-8);
    }
    SymmetricTensorField dk = symmetric_differential(
        e, [](Vec2 p) { return Vec2{-p.y, p.x}; }, [](Vec2) { return Mat2{0, -1, 1, 0}; }, 65);
    for (Vec2 p : {Vec2{0.1, 0.6}, Vec2{-0.4, -0.3}}) CHECK(dk.at(p).max_abs() < 1e-8);
}

TEST_CASE("symmetric differential matches an independent covariant oracle") {
    MetricField g = curved();
    TestField tf{0.1, -0.2, 0.35, 0.8, -0.5};
    SymmetricTensorField ds = symmetric_differential(
        g, [&](Vec2 p) { return tf.v(p); }, [&](Vec2 p) { return tf.dv(p); }, 97);
    // oracle: FD Christoffels from metric values only
    for (Vec2 p : {Vec2{0.2, 0.3}, Vec2{-0.3, 0.1}, Vec2{0.0, -0.45}}) {
        double h = 1e-5;
        std::array<Sym2, 2> dg;
        for (int k = 0; k < 2; ++k) {
            Vec2 e2 = k == 0 ? Vec2{1, 0} : Vec2{0, 1};
            dg[k] = (g.at(p + e2 * h) - g.at(p - e2 * h)) * (1.0 / (2 * h));
        }
        Sym2 gi = g.inv_at(p);
        Christoffel gam;
        for (int k = 0; k < 2; ++k) {
            double m[2][2];
            for (int i = 0; i < 2; ++i)
                for (int j = i; j < 2; ++j) {
                    double s = 0;
                    for (int l = 0; l < 2; ++l)
                        s += gi(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                    m[i][j] = 0.5 * s;
                }
            gam[k] = Sym2{m[0][0], m[0][1], m[1][1]};
        }
        Mat2 J = tf.dv(p);
        Vec2 vv = tf.v(p);
        auto nab = [&](int i, int j) {
            double dij = (i == 0) ? (j == 0 ? J.a : J.b) : (j == 0 ? J.c : J.d);
            return dij - gam[0](i, j) * vv.x - gam[1](i, j) * vv.y;
        };
        Sym2 expect{nab(0, 0), 0.5 * (nab(0, 1) + nab(1, 0)), nab(1, 1)};
        CHECK((ds.at(p) - expect).max_abs() < 1e-5);
    }
}

TEST_CASE("solenoidal projection: potential input, idempotence, orthogonality") {
    MetricField g = curved();
    RayFamily fam = RayFamily::fan(40, 21);
    XRayOperator op(g, 21, fam);

    // pure potential: grid vector field supported inside
    std::size_t nv = 0;
    {
        // count interior nodes via a probe projection
        std::vector<double> zero(op.n_unknowns(), 0.0);
        auto pr = op.solenoidal_project(zero);
        nv = pr.v.size();
    }
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    std::vector<double> v0(nv);
    for (double& x : v0) x = nd(rng);
    // smooth it a little to look like a field
    std::vector<double> f_pot(op.n_unknowns(), 0.0);
    {
        // build ds v0 through the projection helper: project(ds v0) must return
        // fs ~ 0
        // access apply_ds indirectly: f = ds v0 via finite difference of the
        // projection? Use the public wrap: emulate with solenoidal_project on
        // synthetic... instead use the operator on an analytic potential:
    }
    TestField tf{0.0, 0.1, 0.3, 1.0, 0.7};
    SymmetricTensorField dsv = symmetric_differential(
        g, [&](Vec2 p) { return tf.v(p); }, [&](Vec2 p) { return tf.dv(p); }, 97);
    std::vector<double> f_nodal = op.nodal_of(dsv);
    auto pr = op.solenoidal_project(f_nodal);
    double f_norm = std::sqrt(op.inner(f_nodal, f_nodal));
    double fs_norm = std::sqrt(op.inner(pr.fs, pr.fs));
    INFO("potential input: |f|=", f_norm, " |fs|=", fs_norm);
    CHECK(fs_norm < 0.08 * f_norm);  // discrete-vs-analytic potential mismatch is O(h^2)

    // idempotence
    auto pr2 = op.solenoidal_project(pr.fs);
    std::vector<double> diff = pr.fs;
    for (std::size_t k = 0; k < diff.size(); ++k) diff[k] -= pr2.fs[k];
    CHECK(std::sqrt(op.inner(diff, diff)) < 1e-8 * std::max(1.0, fs_norm));

    // orthogonality to random potentials in the weighted inner product
    TensorBump tb = TensorBump::plain(Sym2{1.0, 0.4, -0.6}, {0.2, -0.1}, 0.35);
    auto prb = op.solenoidal_project(op.nodal_of(SymmetricTensorField::from_bump(tb, 97)));
    for (int k = 0; k < 10; ++k) {
        TestField w{0.3 * std::cos(1.0 + k), 0.3 * std::sin(0.7 * k), 0.3, nd(rng), nd(rng)};
        SymmetricTensorField dsw = symmetric_differential(
            g, [&](Vec2 p) { return w.v(p); }, [&](Vec2 p) { return w.dv(p); }, 97);
        std::vector<double> wn = op.nodal_of(dsw);
        // compare against the discrete potential subspace: project wn and take
        // its potential part wn - fs
        auto prw = op.solenoidal_project(wn);
        std::vector<double> pot = wn;
        for (std::size_t q = 0; q < pot.size(); ++q) pot[q] -= prw.fs[q];
        double ip = op.inner(prb.fs, pot);
        double scale = std::sqrt(op.inner(prb.fs, prb.fs) * op.inner(pot, pot)) + 1e-30;
        CHECK(std::abs(ip) / scale < 1e-6);
    }
}

TEST_CASE("s-injectivity probe: stability across resolutions and kernel separation") {
    MetricField e = MetricField::euclidean();
    RayFamily fam = RayFamily::fan(48, 25);
    XRayOperator op21(e, 21, fam);
    auto rep21 = op21.sinjectivity_probe();
    XRayOperator op27(e, 27, RayFamily::fan(64, 33));
    auto rep27 = op27.sinjectivity_probe();

    INFO("sigma_min 21: ", rep21.sigma_min, " 27: ", rep27.sigma_min);
    INFO("potential level 21: ", rep21.potential_level);
    CHECK(rep21.sigma_min > 0.0);
    double ratio = rep21.sigma_min / rep27.sigma_min;
    CHECK(ratio > 0.5);
    CHECK(ratio < 2.0);
    // kernel separation: the transform annihilates analytic potentials at a
    // level far below the solenoidal floor
    CHECK(rep21.sigma_min / std::max(rep21.potential_level, 1e-13) > 1e4);

    // continuity under a small metric perturbation
    MetricField gp = MetricField::perturbed(e, 0.02, TensorBump::solenoidal(1.0, {0.2, 0.1}, 0.3));
    auto repp = XRayOperator(gp, 21, fam).sinjectivity_probe();
    CHECK(std::abs(repp.sigma_min - rep21.sigma_min) < 0.2 * rep21.sigma_min);
}

TEST_CASE("linearized inversion: kernel data, closed loop, noise robustness") {
    MetricField e = MetricField::euclidean();
    RayFamily fam = RayFamily::fan(48, 25);
    XRayOperator op(e, 21, fam);

    // kernel data from an analytic potential: the inversion returns ~0
    TestField tf{0.1, 0.0, 0.3, 1.0, -0.3};
    SymmetricTensorField dsv = symmetric_differential(
        e, [&](Vec2 p) { return tf.v(p); }, [&](Vec2 p) { return tf.dv(p); }, 97);
    XRayData kernel_data = xray_transform(e, dsv, fam);
    auto inv0 = op.invert(kernel_data.values, 1e-4);
    double v_scale = std::sqrt(op.inner(op.nodal_of(dsv), op.nodal_of(dsv)));
    CHECK(std::sqrt(op.inner(inv0.f_nodal, inv0.f_nodal)) < 1e-3 * std::max(v_scale, 1e-12) + 1e-9);

    // synthesize-then-invert loop on a solenoidal bump
    TensorBump tb = TensorBump::solenoidal(1.0, {0.15, 0.1}, 0.28);
    SymmetricTensorField f_true_field = SymmetricTensorField::from_bump(tb, 97);
    auto proj = op.solenoidal_project(op.nodal_of(f_true_field));
    std::vector<double> f_true = proj.fs;
    // data generated from the discrete operator with the true field
    std::vector<double> data(fam.rays.size(), 0.0);
    {
        const auto& M = op.matrix();
        for (std::size_t r = 0; r < fam.rays.size(); ++r) {
            double acc = 0.0;
            for (std::size_t k = 0; k < op.n_unknowns(); ++k)
                acc += M[r * op.n_unknowns() + k] * f_true[k];
            data[r] = acc;
        }
    }
    auto inv = op.invert(data);  // L-curve alpha
    std::vector<double> err = inv.f_nodal;
    for (std::size_t k = 0; k < err.size(); ++k) err[k] -= f_true[k];
    double rel = std::sqrt(op.inner(err, err) / op.inner(f_true, f_true));
    INFO("closed-loop relative error ", rel, " at alpha ", inv.alpha);
    CHECK(rel < 0.10);

    // 1% data noise amplifies the solution error by at most 5x at the L-curve alpha
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    double dl2 = 0.0;
    for (double d : data) dl2 += d * d;
    double sigma = 0.01 * std::sqrt(dl2 / data.size());  // 1% in the data l2 norm
    std::vector<double> noisy = data;
    for (double& d : noisy) d += sigma * nd(rng);
    auto invn = op.invert(noisy);
    std::vector<double> errn = invn.f_nodal;
    for (std::size_t k = 0; k < errn.size(); ++k) errn[k] -= f_true[k];
    double reln = std::sqrt(op.inner(errn, errn) / op.inner(f_true, f_true));
    INFO("noisy relative error ", reln, " at alpha ", invn.alpha);
    CHECK(reln < 5.0 * std::max(rel, 0.01));

    CHECK_THROWS_AS(op.invert(data, 0.0), NumericError);
}
