#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <queue>
#include <random>

#include "dnlab/geodesic.hpp"

using namespace dnlab;

namespace {

MetricField conformal_bump(double amp = 0.3, Vec2 c = {0.2, -0.1}, double sigma = 0.35) {
    return MetricField::conformal(ScalarField::one_bump(1.0, amp, c, sigma));
}

// Dijkstra on a fine grid graph with a 32-direction stencil; exact endpoints
// are stitched into the graph. Independent oracle for boundary distances.
double dijkstra_distance(const MetricField& g, Vec2 a, Vec2 b, int n = 361) {
    const double h = 2.0 / (n - 1);
    auto idx = [&](int i, int j) { return j * n + i; };
    auto pos = [&](int i, int j) { return Vec2{-1.0 + i * h, -1.0 + j * h}; };
    auto inside = [&](Vec2 p) { return p.norm() <= 1.0 + 1e-12; };
    auto seg_len = [&](Vec2 p, Vec2 q) {
        Vec2 mid = (p + q) * 0.5;
        Vec2 d = q - p;
        return std::sqrt(g.at(mid).quad(d));
    };

    std::vector<std::pair<int, int>> moves;
    for (int dx = -3; dx <= 3; ++dx)
        for (int dy = -3; dy <= 3; ++dy) {
            if (dx == 0 && dy == 0) continue;
            if (std::gcd(std::abs(dx), std::abs(dy)) != 1) continue;
            moves.emplace_back(dx, dy);
        }

    const int START = n * n, GOAL = n * n + 1;
    std::vector<double> dist(n * n + 2, 1e30);
    using QE = std::pair<double, int>;
    std::priority_queue<QE, std::vector<QE>, std::greater<>> pq;

    // stitch endpoints to every node within a small radius
    auto stitch = [&](Vec2 p, int node, bool source) {
        int ic = static_cast<int>((p.x + 1.0) / h), jc = static_cast<int>((p.y + 1.0) / h);
        for (int i = std::max(0, ic - 3); i <= std::min(n - 1, ic + 4); ++i)
            for (int j = std::max(0, jc - 3); j <= std::min(n - 1, jc + 4); ++j) {
                Vec2 q = pos(i, j);
                if (!inside(q)) continue;
                double w = seg_len(p, q);
                if (source) {
                    dist[idx(i, j)] = std::min(dist[idx(i, j)], w);
                } else {
                    // handled when popping grid nodes
                }
            }
        (void)node;
    };
    stitch(a, START, true);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (dist[idx(i, j)] < 1e29) pq.emplace(dist[idx(i, j)], idx(i, j));

    int igc = static_cast<int>((b.x + 1.0) / h), jgc = static_cast<int>((b.y + 1.0) / h);
    auto goal_weight = [&](int i, int j) -> double {
        if (std::abs(i - igc) > 4 || std::abs(j - jgc) > 4) return -1.0;
        Vec2 q = pos(i, j);
        if (!inside(q)) return -1.0;
        return seg_len(q, b);
    };

    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (u == GOAL) return d;
        if (d > dist[u] + 1e-15) continue;
        int i = u % n, j = u / n;
        Vec2 p = pos(i, j);
        if (!inside(p)) continue;
        double gw = goal_weight(i, j);
        if (gw >= 0.0 && d + gw < dist[GOAL]) {
            dist[GOAL] = d + gw;
            pq.emplace(dist[GOAL], GOAL);
        }
        for (auto [dx, dy] : moves) {
            int i2 = i + dx, j2 = j + dy;
            if (i2 < 0 || j2 < 0 || i2 >= n || j2 >= n) continue;
            Vec2 q = pos(i2, j2);
            if (!inside(q)) continue;
            double w = seg_len(p, q);
            if (d + w < dist[idx(i2, j2)]) {
                dist[idx(i2, j2)] = d + w;
                pq.emplace(d + w, idx(i2, j2));
            }
        }
    }
    return dist[GOAL];
}

std::mt19937_64 rng(7);

}  // namespace

TEST_CASE("flat geodesics are straight chords") {
    MetricField g = MetricField::euclidean();
    Geodesic geo = trace_geodesic(g, {-1.0, 0.0}, {1.0, 0.0}, TraceMode::UntilExit);
    CHECK(geo.exited);
    CHECK((geo.exit - Vec2{1.0, 0.0}).norm() < 1e-8);
    CHECK(geo.length == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(std::abs(geo.exit.norm() - 1.0) < 1e-8);
}

TEST_CASE("constant conformal factor scales lengths") {
    MetricField g = MetricField::conformal(ScalarField::constant(2.0));
    Geodesic geo = trace_geodesic(g, {-1.0, 0.0}, {1.0, 0.0}, TraceMode::UntilExit);
    CHECK(geo.length == doctest::Approx(4.0).epsilon(1e-10));
    CHECK((geo.exit - Vec2{1.0, 0.0}).norm() < 1e-8);
}

TEST_CASE("bump metric: step-refinement self-convergence of the exit point") {
    MetricField g = conformal_bump(0.4, {0.1, 0.15}, 0.3);
    Vec2 x0{-1.0, 0.0};
    BoundaryFrame fr = boundary_frame(g, pi);
    Vec2 v = fr.normal_in * std::cos(0.3) + fr.tangent * std::sin(0.3);
    TraceOptions c1, c2;
    c1.step = 1e-3;
    c2.step = 5e-4;
    Geodesic a = trace_geodesic(g, x0, v, TraceMode::UntilExit, 0.0, c1);
    Geodesic b = trace_geodesic(g, x0, v, TraceMode::UntilExit, 0.0, c2);
    CHECK((a.exit - b.exit).norm() < 1e-7);
}

TEST_CASE("energy conservation and integrator order") {
    MetricField g = conformal_bump(0.5, {0.0, 0.1}, 0.3);
    BoundaryFrame fr = boundary_frame(g, 0.3);
    Vec2 v = fr.normal_in * std::cos(0.5) + fr.tangent * std::sin(0.5);

    TraceOptions o1;
    o1.step = 4e-3;
    Geodesic a = trace_geodesic(g, fr.point, v, TraceMode::UntilExit, 0.0, o1);
    CHECK(a.energy_drift < 1e-6);

    TraceOptions o2;
    o2.step = 2e-3;
    Geodesic b = trace_geodesic(g, fr.point, v, TraceMode::UntilExit, 0.0, o2);
    CHECK(a.energy_drift / std::max(b.energy_drift, 1e-16) >= 8.0);
}

TEST_CASE("exponential map basics and first-order consistency") {
    MetricField g = conformal_bump();
    Vec2 x{0.2, 0.3};
    CHECK((exp_map(g, x, {0, 0}) - x).norm() == 0.0);

    MetricField e = MetricField::euclidean();
    Vec2 v{0.4, -0.2};
    CHECK((exp_map(e, x, v) - (x + v)).norm() < 1e-12);

    // |exp_x(eps v) - (x + eps v)| = O(eps^2): measured order >= 1.9
    Vec2 w{0.8, 0.45};
    std::vector<double> epss{1e-2, 1e-3};
    std::vector<double> errs;
    for (double eps : epss) errs.push_back((exp_map(g, x, w * eps) - (x + w * eps)).norm());
    double order = std::log(errs[0] / errs[1]) / std::log(epss[0] / epss[1]);
    CHECK(order >= 1.9);
}

TEST_CASE("flat boundary distances are chords") {
    MetricField g = MetricField::euclidean();
    CHECK(boundary_distance(g, 0.0, pi) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(boundary_distance(g, 0.3, 0.3 + pi / 3) ==
          doctest::Approx(2.0 * std::sin(pi / 6)).epsilon(1e-6));
}

TEST_CASE("boundary distance symmetry") {
    MetricField g = conformal_bump(0.25, {0.15, -0.05}, 0.4);
    std::uniform_real_distribution<double> u(0.0, 2 * pi);
    for (int i = 0; i < 20; ++i) {
        double a = u(rng), b = u(rng);
        if (std::abs(wrap_angle(a - b)) < 0.3) continue;
        double dab = boundary_distance(g, a, b);
        double dba = boundary_distance(g, b, a);
        CHECK(dab == doctest::Approx(dba).epsilon(1e-6));
    }
}

TEST_CASE("boundary distance vs Dijkstra oracle") {
    MetricField g = conformal_bump(0.3, {0.2, -0.1}, 0.35);
    for (auto [a, b] : {std::pair{0.0, pi}, {0.7, 0.7 + 2 * pi / 3}, {2.1, 2.1 + 0.9 * pi}}) {
        Vec2 pa{std::cos(a), std::sin(a)}, pb{std::cos(b), std::sin(b)};
        double shoot = boundary_distance(g, a, b);
        double oracle = dijkstra_distance(g, pa, pb);
        CHECK(shoot == doctest::Approx(oracle).epsilon(0.01));
    }
}

TEST_CASE("distance table: symmetry, diagonal, triangle inequality") {
    MetricField g = conformal_bump(0.2, {0.1, 0.1}, 0.4);
    BoundaryDistanceTable t = build_distance_table(g, 10);
    std::size_t n = t.angles.size();
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(t.at(i, i) == 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(t.at(i, j) == doctest::Approx(t.at(j, i)).epsilon(2e-6));
            for (std::size_t k = 0; k < n; ++k)
                CHECK(t.at(i, j) <= t.at(i, k) + t.at(k, j) + 2e-6);
        }
    }
    t.save_csv("dist_table.csv");
    BoundaryDistanceTable l = BoundaryDistanceTable::load_csv("dist_table.csv");
    CHECK(l.max_abs_diff(t) < 1e-10);
    std::remove("dist_table.csv");
}

TEST_CASE("gauge invariance of boundary distances under pullback") {
    MetricField g = conformal_bump(0.2, {0.0, 0.15}, 0.4);
    DiffeoField psi = DiffeoField::bump({0.25, -0.1}, 0.1, {0.1, -0.1}, 0.35);
    MetricField gp = MetricField::pullback(psi, g);
    for (auto [a, b] : {std::pair{0.2, 0.2 + pi}, {1.0, 2.6}, {4.0, 5.8}}) {
        CHECK(boundary_distance(g, a, b) ==
              doctest::Approx(boundary_distance(gp, a, b)).epsilon(2e-5));
    }
}

TEST_CASE("simplicity: flat disk passes with margin 1") {
    SimplicityReport rep = simplicity_check(MetricField::euclidean(), 16, 5);
    CHECK(rep.simple);
    CHECK(rep.convexity_margin == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(!rep.conjugate_point_found);
}

TEST_CASE("simplicity: strong interior lens flags conjugate points") {
    // deep positive-curvature focus region
    MetricField lens = MetricField::conformal(ScalarField::one_bump(1.0, 3.0, {0.0, 0.0}, 0.22));
    SimplicityReport rep = simplicity_check(lens, 12, 7);
    CHECK(rep.conjugate_point_found);
    CHECK(!rep.simple);
}

TEST_CASE("simplicity: small perturbation of flat stays simple") {
    MetricField g = MetricField::perturbed(MetricField::euclidean(), 0.01,
                                           TensorBump::solenoidal(1.0, {0.1, 0.0}, 0.3));
    SimplicityReport rep = simplicity_check(g, 12, 5);
    CHECK(rep.simple);
}

TEST_CASE("trapped rays raise a trapping error") {
    MetricField lens = MetricField::conformal(ScalarField::one_bump(1.0, 6.0, {0.0, 0.0}, 0.3));
    TraceOptions opt;
    opt.max_time = 8.0;
    opt.store_every = 50;
    // a ray grazing the deep lens loops beyond the arc-length cap
    BoundaryFrame fr = boundary_frame(lens, 0.0);
    Vec2 v = fr.normal_in * std::cos(1.1) + fr.tangent * std::sin(1.1);
    CHECK_THROWS_AS(trace_geodesic(lens, fr.point, v, TraceMode::UntilExit, 0.0, opt),
                    GeometryError);
}
