#ifndef DNLAB_CHART_HPP
#define DNLAB_CHART_HPP

#include "dnlab/geodesic.hpp"
#include "dnlab/metric.hpp"

namespace dnlab {

// Boundary normal chart at a base boundary point: x' is Euclidean arc length
// along the circle from the base point (counterclockwise positive), x^n is
// g-distance to the boundary along the inward normal geodesic. In these
// coordinates g_{1n} = 0 and g_{nn} = 1; d/dnu = -d/dx^n.
class BoundaryChart {
public:
    BoundaryChart(const MetricField& g, double theta0, double radius);

    // chart coordinates (x', x^n) -> disk point
    Vec2 to_disk(double xprime, double xn) const;
    // disk point -> chart coordinates (Newton on the forward map)
    std::pair<double, double> from_disk(Vec2 p, double tol = 1e-12) const;

    // metric coefficients in chart coordinates (pullback by the chart map)
    Sym2 chart_metric(double xprime, double xn) const;

    double theta0() const { return theta0_; }
    double radius() const { return radius_; }
    const MetricField& metric() const { return g_; }

    // largest deviation of (g_{1n}, g_{nn}-1) over a sample patch
    double max_chart_defect(int n = 9) const;

private:
    MetricField g_;
    double theta0_;
    double radius_;
    TraceOptions opt_;

    Vec2 boundary_point(double xprime) const;
};

}  // namespace dnlab

#endif
