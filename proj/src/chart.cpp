#include "dnlab/chart.hpp"

#include <sstream>

namespace dnlab {

BoundaryChart::BoundaryChart(const MetricField& g, double theta0, double radius)
    : g_(g), theta0_(theta0), radius_(radius) {
    if (radius <= 0.0 || radius > 1.5) throw ConfigError("boundary chart: bad radius");
    opt_.step = 5e-4;
    // normal geodesics must not cross within the chart depth: the forward map
    // must keep an invertible Jacobian on the patch
    for (int i = -2; i <= 2; ++i)
        for (int j = 0; j <= 2; ++j) {
            double xp = radius * i / 2.0, xn = radius * j / 2.0;
            double h = 1e-5;
            Vec2 dxp = (to_disk(xp + h, xn) - to_disk(xp - h, xn)) / (2 * h);
            Vec2 dxn = (to_disk(xp, xn + h) - to_disk(xp, xn - h)) / (2 * h);
            double det = dxp.x * dxn.y - dxp.y * dxn.x;
            if (!(std::abs(det) > 1e-8)) {
                std::ostringstream os;
                os << "boundary chart: normal geodesics cross near (x'=" << xp << ", xn=" << xn
                   << "); use a smaller radius";
                throw GeometryError(os.str());
            }
        }
}

Vec2 BoundaryChart::boundary_point(double xprime) const {
    double th = theta0_ + xprime;  // unit circle: arc length = angle
    return {std::cos(th), std::sin(th)};
}

Vec2 BoundaryChart::to_disk(double xprime, double xn) const {
    BoundaryFrame fr = boundary_frame(g_, theta0_ + xprime);
    if (xn == 0.0) return fr.point;
    // inward g-unit normal geodesic, arc length x^n (negative xn probes the
    // analytic extension outside the disk)
    Vec2 dir = xn > 0 ? fr.normal_in : -fr.normal_in;
    Geodesic geo = trace_geodesic(g_, fr.point, dir, TraceMode::FixedTime, std::abs(xn), opt_);
    return geo.back().x;
}

std::pair<double, double> BoundaryChart::from_disk(Vec2 p, double tol) const {
    // initial guess from polar coordinates
    double xp = wrap_angle(std::atan2(p.y, p.x) - theta0_);
    double xn = (1.0 - p.norm()) * std::sqrt(g_.at(p).min_eig());
    for (int it = 0; it < 60; ++it) {
        Vec2 f = to_disk(xp, xn) - p;
        if (f.norm() < tol) return {xp, xn};
        double h = 1e-6;
        Vec2 dxp = (to_disk(xp + h, xn) - to_disk(xp - h, xn)) / (2 * h);
        Vec2 dxn = (to_disk(xp, xn + h) - to_disk(xp, xn - h)) / (2 * h);
        Mat2 jac{dxp.x, dxn.x, dxp.y, dxn.y};
        Vec2 delta = jac.inverse().apply(f);
        double damp = 1.0;
        if (delta.norm() > 0.3) damp = 0.3 / delta.norm();
        xp -= damp * delta.x;
        xn -= damp * delta.y;
    }
    throw NumericError("boundary chart: inverse map did not converge");
}

Sym2 BoundaryChart::chart_metric(double xprime, double xn) const {
    double h = 1e-5;
    Vec2 dxp = (to_disk(xprime + h, xn) - to_disk(xprime - h, xn)) / (2 * h);
    Vec2 dxn = (to_disk(xprime, xn + h) - to_disk(xprime, xn - h)) / (2 * h);
    Mat2 jac{dxp.x, dxn.x, dxp.y, dxn.y};
    return jac.congruent(g_.at(to_disk(xprime, xn)));
}

double BoundaryChart::max_chart_defect(int n) const {
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double xp = radius_ * (2.0 * i / (n - 1) - 1.0);
            double xn = radius_ * j / (n - 1);
            Sym2 h = chart_metric(xp, xn);
            worst = std::max({worst, std::abs(h.xy), std::abs(h.yy - 1.0)});
        }
    return worst;
}

}  // namespace dnlab
