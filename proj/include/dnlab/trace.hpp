#ifndef DNLAB_TRACE_HPP
#define DNLAB_TRACE_HPP

#include <string>
#include <vector>

#include "dnlab/core.hpp"

namespace dnlab {

// space-time samples of a field on (0,T) x boundary circle
struct BoundaryTrace {
    enum class Kind { DirichletData, DnOutput };

    Kind kind = Kind::DirichletData;
    double dt = 0.0;                 // sample spacing
    std::vector<double> angles;      // boundary node angles
    std::vector<cplx> values;        // n_time x n_boundary, row-major in time

    std::size_t n_time() const { return angles.empty() ? 0 : values.size() / angles.size(); }
    std::size_t n_boundary() const { return angles.size(); }
    double time_of(std::size_t k) const { return dt * static_cast<double>(k); }

    cplx& at(std::size_t k, std::size_t j) { return values[k * angles.size() + j]; }
    cplx at(std::size_t k, std::size_t j) const { return values[k * angles.size() + j]; }

    // L2 norm over [0,T] x boundary with trapezoid-in-time, uniform-in-angle weights
    double l2_norm() const;
    double max_abs() const;

    // dirichlet-data probe invariant: zero at t=0, supported in [0, eps]
    void validate_probe_support(double eps, double tol = 1e-12) const;

    void save_csv(const std::string& path) const;
    static BoundaryTrace load_csv(const std::string& path);
};

}  // namespace dnlab

#endif
