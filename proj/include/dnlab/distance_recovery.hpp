#ifndef DNLAB_DISTANCE_RECOVERY_HPP
#define DNLAB_DISTANCE_RECOVERY_HPP

#include "dnlab/boundary_recovery.hpp"
#include "dnlab/wkb.hpp"

namespace dnlab {

struct TravelProbeOptions {
    double mu = 0.5;          // exponent knob sizing U via the support radius
    double C = 4.0;           // radius constant: radius = delta^{mu/2}/C
    double exterior_leg = 0.35;  // rho(z0, x0) margin
    double t0 = -1.0;         // emission center; < 0: auto from the radius
    double lambda = 25.0;
    double lambda_ratio = 1.4;   // second frequency for background rejection
    double cone_halfwidth = 0.55;
    double s_max = 3.6;
    int n_tau = 81;
    int n_s = 361;
};

// outgoing packet data for one boundary pair probe, built from collar
// knowledge only (phase = distance from an exterior source on the backward
// geodesic extension)
struct TravelProbe {
    double theta_src = 0.0;
    double theta_aim = 0.0;      // current launch aim (boundary angle)
    Vec2 z0;
    double t0 = 0.0;
    double radius = 0.0;         // Eq.(25) support radius
    double delta = 0.0, mu = 0.5, C = 4.0;
    std::shared_ptr<PhaseField> phase;     // collar point-source eikonal
    std::shared_ptr<CutoffField> chi;
    double phi_at_src = 0.0;     // phase value at x_0

    // reflected continuation plan: solve again with data -u|_V on the arc
    struct ReflectionPlan {
        bool scheduled = false;
        double v_center = 0.0;
        double v_halfwidth = 0.0;
        double start_time = 0.0;
    };
    ReflectionPlan plan;

    WaveSolver::BoundaryFn data(double lambda) const;
    double solve_window() const;  // T covering the crossing
};

TravelProbe launch_travel_probe(const MetricField& g_collar, double theta_src, double theta_aim,
                                double delta, const TravelProbeOptions& opt = {});

struct ThresholdPolicy {
    double factor = 8.0;          // threshold = median + factor * robust spread
    double exclusion_arc = 0.45;  // mask around the source patch
    double ratio_tolerance = 2.2; // lambda-scaling consistency band
};

struct ArrivalRecord {
    bool found = false;
    double peak_angle = 0.0;
    double arrival_time = 0.0;         // dispersion-extrapolated energy centroid
    double arrival_time_raw = 0.0;     // at the primary frequency
    std::vector<double> v_angles;      // detected arrival set V
    double amplitude_l2 = 0.0;         // ||response / (2 lambda)||_{L2(V window)}
    double background = 0.0, threshold = 0.0;
    double temporal_width = 0.0;
};

ArrivalRecord detect_arrival(const BoundaryTrace& dn1, double lambda1, const BoundaryTrace& dn2,
                             double lambda2, const TravelProbe& probe,
                             const ThresholdPolicy& policy = {});

struct DistanceEstimate {
    double rho = 0.0;
    bool valid = false;
    bool near_diagonal = false;
    double delta_used = 0.0;
    double peak_angle = 0.0;
    int aims = 0;
};

// travel-time recovery for one boundary pair through the DN blackbox
DistanceEstimate recover_boundary_distance(const DnBlackbox& bb, const MetricField& g_collar,
                                           double theta_x, double theta_y, double delta,
                                           const TravelProbeOptions& opt = {},
                                           const ThresholdPolicy& policy = {});

struct RecoveredTable {
    BoundaryDistanceTable table;
    std::vector<char> valid;  // per entry validity mask

    void save_csv(const std::string& path) const;
};

RecoveredTable build_recovered_distance_table(const DnBlackbox& bb, const MetricField& g_collar,
                                              int n_angles, double delta,
                                              const TravelProbeOptions& opt = {},
                                              const ThresholdPolicy& policy = {});

// Eq.(28) exponent check: demodulated arrival amplitude on V versus delta
struct AmplitudePoint {
    double delta = 0.0;
    double amplitude = 0.0;
    double radius = 0.0;
};
std::vector<AmplitudePoint> arrival_amplitude_sweep(const DnBlackbox& bb,
                                                    const MetricField& g_collar, double theta_src,
                                                    double theta_tgt,
                                                    const std::vector<double>& deltas,
                                                    const TravelProbeOptions& opt = {},
                                                    const ThresholdPolicy& policy = {});

}  // namespace dnlab

#endif
