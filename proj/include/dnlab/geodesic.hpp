#ifndef DNLAB_GEODESIC_HPP
#define DNLAB_GEODESIC_HPP

#include <optional>
#include <string>
#include <vector>

#include "dnlab/metric.hpp"

namespace dnlab {

struct GeodesicState {
    Vec2 x;
    Vec2 v;
    double t = 0.0;  // arc-time parameter
};

struct Geodesic {
    std::vector<GeodesicState> states;
    double length = 0.0;            // |v|_g * arc-time for the traced parametrization
    bool exited = false;            // left the unit disk
    Vec2 entry, exit;               // boundary points when applicable
    Vec2 exit_velocity;
    double energy_drift = 0.0;      // max relative drift of g_ij v^i v^j

    const GeodesicState& back() const { return states.back(); }
    // linear interpolation of the state at arc-time t
    GeodesicState at_time(double t) const;
};

struct TraceOptions {
    double step = 1e-3;             // RK4 arc-time step
    double max_time = 12.0;         // trapping threshold
    double outer_radius = 1.0;      // exit radius (extended-domain traces use > 1)
    int store_every = 1;            // state subsampling
};

enum class TraceMode { UntilExit, FixedTime };

// integrate xdot = v, vdot^k = -Gamma^k_{ij} v^i v^j
Geodesic trace_geodesic(const MetricField& g, Vec2 x0, Vec2 v0, TraceMode mode,
                        double fixed_time = 0.0, const TraceOptions& opt = {});

// exp_x(v): endpoint at unit arc-time of the geodesic with initial velocity v
Vec2 exp_map(const MetricField& g, Vec2 x, Vec2 v, const TraceOptions& opt = {});

// boundary frame at angle theta: g-unit inward normal N and g-unit tangent T
// with g(N,T) = 0, T counterclockwise
struct BoundaryFrame {
    Vec2 point;
    Vec2 normal_in;
    Vec2 tangent;
};
BoundaryFrame boundary_frame(const MetricField& g, double theta);

struct ShootResult {
    double length = 0.0;
    double launch_angle = 0.0;      // relative to the inward normal, in the g-orthonormal frame
    Vec2 exit_point;
    double residual = 0.0;          // Euclidean distance from the target
};

// distance between boundary points at angles theta_x, theta_y by shooting
// (coarse bracket + bisection/secant on the exit angle)
ShootResult shoot_boundary_geodesic(const MetricField& g, double theta_x, double theta_y,
                                    const TraceOptions& opt = {}, double tol = 1e-7);

double boundary_distance(const MetricField& g, double theta_x, double theta_y,
                         const TraceOptions& opt = {});

struct BoundaryDistanceTable {
    std::vector<double> angles;
    std::vector<double> dist;  // row-major angles.size()^2
    std::string metric_fingerprint;

    double& at(std::size_t i, std::size_t j) { return dist[i * angles.size() + j]; }
    double at(std::size_t i, std::size_t j) const { return dist[i * angles.size() + j]; }
    double max_value() const;
    double max_abs_diff(const BoundaryDistanceTable& other) const;

    void save_csv(const std::string& path) const;
    static BoundaryDistanceTable load_csv(const std::string& path);
};

BoundaryDistanceTable build_distance_table(const MetricField& g, int n_angles,
                                           const TraceOptions& opt = {}, int jobs = 0);

struct SimplicityReport {
    double convexity_margin = 0.0;          // min second-fundamental-form eigenvalue on samples
    bool conjugate_point_found = false;
    Vec2 conjugate_location;
    double conjugate_time = 0.0;
    bool shooting_unique = true;
    bool simple = false;
    std::string detail;
};

SimplicityReport simplicity_check(const MetricField& g, int boundary_samples = 64,
                                  int ray_fan = 9, const TraceOptions& opt = {});

}  // namespace dnlab

#endif
