#ifndef DNLAB_WAVE_HPP
#define DNLAB_WAVE_HPP

#include <functional>

#include "dnlab/metric.hpp"
#include "dnlab/trace.hpp"

namespace dnlab {

// boundary-fitted polar grid: radial rings clustered near the circle, uniform
// angular nodes; optional annulus mode for boundary-localized probes
struct SolverGrid {
    int n_radial = 64;        // rings including the boundary ring
    int n_angular = 128;
    double stretch = 3.0;     // ratio of center to boundary radial spacing
    double inner_radius = 0;  // > 0: annulus with an inner Dirichlet-0 ring
    double cfl_safety = 0.5;

    void validate() const;
};

struct WaveRunOptions {
    int dn_every = 0;              // record the DN output every k steps (0: off)
    double dn_dt = 0.0;            // > 0: pin the DN sample spacing exactly (shared
                                   // output grids across solvers); overrides dn_every
    bool keep_final_field = false;
    double energy_watch_from = -1.0;  // >= 0: track discrete energy drift from here
    int watch_ring = -1;               // >= 0: record max |u| on this ring
    std::function<cplx(double, Vec2)> source;  // optional volume forcing (tests)
};

struct WaveRunResult {
    BoundaryTrace dn;                  // kind DnOutput when requested
    std::vector<cplx> final_field;
    double energy_reference = 0.0;
    double energy_drift = 0.0;         // max |E - E_ref| / E_ref after the watch time
    std::size_t energy_steps = 0;      // steps covered by the drift measurement
    double ring_max = 0.0;             // max |u| seen on the watched ring
    double t_final = 0.0;
};

// leapfrog solver for u_tt = Delta_g u on the disk, Dirichlet data on the circle
class WaveSolver {
public:
    WaveSolver(const MetricField& g, SolverGrid grid);

    using BoundaryFn = std::function<cplx(double, double)>;  // (t, theta)

    // solve (1) with u = u_t = 0 at t=0 and u = f on the lateral boundary;
    // f must vanish at t=0 (compatibility)
    WaveRunResult run(const BoundaryFn& f, double T, const WaveRunOptions& opt = {}) const;

    double dt() const { return dt_; }
    const SolverGrid& grid() const { return grid_; }
    const std::vector<double>& angles() const { return angles_; }
    int n_radial() const { return grid_.n_radial; }
    Vec2 node_position(int i, int j) const;
    double min_cell_width() const { return min_cell_; }
    double max_speed() const { return max_speed_; }
    // g-distance from the inner truncation ring to the boundary (annulus mode)
    double annulus_depth() const { return annulus_depth_; }
    const MetricField& metric() const { return g_; }

private:
    MetricField g_;
    SolverGrid grid_;
    double dt_ = 0.0;
    double hxi_ = 0.0, hth_ = 0.0;
    double min_cell_ = 0.0, max_speed_ = 1.0, annulus_depth_ = 0.0;
    std::vector<double> angles_;
    std::vector<double> radii_;        // r(xi_i)
    std::vector<double> kxi_, kth_, beta_, isg_;  // stencil coefficient fields
    std::vector<Sym2> bdry_ginv_;
    std::vector<Mat2> bdry_jacinv_;    // inverse coordinate Jacobian at boundary nodes
    std::vector<double> bdry_nu_;      // conormal normalization

    double radial_map(double xi) const;
    double radial_map_d(double xi) const;
    void apply_operator(const std::vector<cplx>& u, std::vector<cplx>& lu) const;
    double energy(const std::vector<cplx>& ua, const std::vector<cplx>& ub,
                  const std::vector<cplx>& lu_b, double dt) const;
    void dn_extract(const std::vector<cplx>& u, cplx* out) const;
    std::size_t at(int i, int j) const {
        int na = grid_.n_angular;
        return static_cast<std::size_t>(i) * na + ((j % na + na) % na);
    }
};

// conormal derivative of the IBVP solution on (0,T) x boundary (the DN map)
BoundaryTrace dn_apply(const MetricField& g, const WaveSolver::BoundaryFn& f, double T,
                       const SolverGrid& grid, int dn_every = 1);

// the same, reusing a prebuilt solver
BoundaryTrace dn_apply(const WaveSolver& solver, const WaveSolver::BoundaryFn& f, double T,
                       int dn_every = 1);

// DN output on the exactly pinned time grid k * dn_dt, k = 0..T/dn_dt
BoundaryTrace dn_apply_pinned(const WaveSolver& solver, const WaveSolver::BoundaryFn& f, double T,
                              double dn_dt);

}  // namespace dnlab

#endif
