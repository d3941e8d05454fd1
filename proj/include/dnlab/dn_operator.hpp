#ifndef DNLAB_DN_OPERATOR_HPP
#define DNLAB_DN_OPERATOR_HPP

#include <functional>
#include <string>
#include <vector>

#include "dnlab/wave.hpp"

namespace dnlab {

// probe data f_k(t, theta) = time bump x angular harmonic, supported in
// (0, eps) x boundary, with the H^1 Gram matrix of the family
class ProbeBasis {
public:
    ProbeBasis() = default;

    struct Element {
        int time_mode = 0;     // bump index
        int angular_mode = 0;  // 0: const, 2k-1: cos(k th), 2k: sin(k th)
    };

    double eps = 0.5;
    double T = 3.0;
    std::vector<Element> elements;
    std::vector<double> gram;  // n x n, H^1([0,eps] x dOmega) inner products

    std::size_t size() const { return elements.size(); }
    double gram_at(std::size_t i, std::size_t j) const { return gram[i * size() + j]; }

    double value(std::size_t k, double t, double theta) const;
    double dvalue_dt(std::size_t k, double t, double theta) const;
    double dvalue_dtheta(std::size_t k, double t, double theta) const;

    // H^1 inner product of two elements by quadrature (exposed for the
    // refined-quadrature oracle in tests)
    double h1_inner(std::size_t i, std::size_t j, int nt_quad, int na_quad) const;

private:
    int n_time_modes_ = 0;
};

// basis spanning n_time x n_angular modes; Gram assembled on a trace-grid
// style quadrature (trapezoid in t, uniform in theta)
ProbeBasis build_probe_basis(double eps, double T, int n_time_modes, int n_angular_modes,
                             int nt_quad = 2048, int na_quad = 256);

// discretized DN operator on a probe basis
struct DNMatrix {
    std::vector<cplx> columns;    // (n_time_out * n_boundary) x basis size, column-major
    std::size_t rows = 0;
    std::size_t n_basis = 0;
    double out_dt = 0.0;
    std::size_t n_time_out = 0, n_boundary = 0;
    std::vector<double> weights;  // L2 quadrature weights per row
    ProbeBasis basis;
    std::string metric_fingerprint;
    std::string grid_fingerprint;

    cplx at(std::size_t row, std::size_t col) const { return columns[col * rows + row]; }

    void save(const std::string& csv_path, const std::string& json_sidecar_path) const;
};

DNMatrix assemble_dn_matrix(const MetricField& g, const ProbeBasis& basis, const SolverGrid& grid,
                            double out_dt = 0.02, int jobs = 0);

// operator distance in the H^1_0 -> L^2 norm: delta^2 is the top eigenvalue of
// G^{-1} D^* W D, computed by power iteration; also returns the maximizing
// probe coefficients
struct DnDistanceResult {
    double delta = 0.0;
    std::vector<cplx> maximizer;
    int iterations = 0;
};

DnDistanceResult dn_distance(const DNMatrix& a, const DNMatrix& b, double tol = 1e-8,
                             std::uint64_t seed = 1234);

// restriction of a DN matrix to a subset of basis elements (monotonicity tests)
DNMatrix restrict_basis(const DNMatrix& m, const std::vector<std::size_t>& keep);

}  // namespace dnlab

#endif
