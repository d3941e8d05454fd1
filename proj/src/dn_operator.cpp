#include "dnlab/dn_operator.hpp"

#include <Eigen/Dense>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace dnlab {

namespace {

double time_bump(double t, double c, double w) { return bump_inf((t - c) / w); }

double angular_mode(int m, double theta) {
    if (m == 0) return 1.0;
    int k = (m + 1) / 2;
    return m % 2 ? std::cos(k * theta) : std::sin(k * theta);
}

double angular_mode_d(int m, double theta) {
    if (m == 0) return 0.0;
    int k = (m + 1) / 2;
    return m % 2 ? -k * std::sin(k * theta) : k * std::cos(k * theta);
}

void bump_params(const ProbeBasis& b, int tm, double& c, double& w) {
    int n = 0;
    for (const auto& e : b.elements) n = std::max(n, e.time_mode + 1);
    c = b.eps * (tm + 1.0) / (n + 1.0);
    w = b.eps / (n + 1.0);
}

}  // namespace

double ProbeBasis::value(std::size_t k, double t, double theta) const {
    const Element& e = elements[k];
    double c, w;
    bump_params(*this, e.time_mode, c, w);
    return time_bump(t, c, w) * angular_mode(e.angular_mode, theta);
}

double ProbeBasis::dvalue_dt(std::size_t k, double t, double theta) const {
    const Element& e = elements[k];
    double c, w;
    bump_params(*this, e.time_mode, c, w);
    double h = 1e-6;
    return (time_bump(t + h, c, w) - time_bump(t - h, c, w)) / (2 * h) *
           angular_mode(e.angular_mode, theta);
}

double ProbeBasis::dvalue_dtheta(std::size_t k, double t, double theta) const {
    const Element& e = elements[k];
    double c, w;
    bump_params(*this, e.time_mode, c, w);
    return time_bump(t, c, w) * angular_mode_d(e.angular_mode, theta);
}

double ProbeBasis::h1_inner(std::size_t i, std::size_t j, int nt_quad, int na_quad) const {
    double ht = eps / (nt_quad - 1);
    double ha = 2.0 * pi / na_quad;
    double acc = 0.0;
    for (int a = 0; a < nt_quad; ++a) {
        double t = a * ht;
        double wt = (a == 0 || a == nt_quad - 1) ? 0.5 : 1.0;
        for (int b = 0; b < na_quad; ++b) {
            double th = b * ha;
            acc += wt * (value(i, t, th) * value(j, t, th) +
                         dvalue_dt(i, t, th) * dvalue_dt(j, t, th) +
                         dvalue_dtheta(i, t, th) * dvalue_dtheta(j, t, th));
        }
    }
    return acc * ht * ha;
}

ProbeBasis build_probe_basis(double eps, double T, int n_time_modes, int n_angular_modes,
                             int nt_quad, int na_quad) {
    if (eps <= 0.0 || eps >= T) throw ConfigError("probe basis: need 0 < eps < T");
    if (n_time_modes < 1 || n_angular_modes < 1) throw ConfigError("probe basis: empty mode box");
    int kmax = n_angular_modes / 2;
    if (2 * kmax >= na_quad / 2)
        throw ResolutionError("probe basis: angular modes exceed quadrature resolvability");
    if (nt_quad < 20 * (n_time_modes + 1))
        throw ResolutionError("probe basis: time bumps exceed quadrature resolvability");

    ProbeBasis b;
    b.eps = eps;
    b.T = T;
    for (int tm = 0; tm < n_time_modes; ++tm)
        for (int am = 0; am < n_angular_modes; ++am) b.elements.push_back({tm, am});

    std::size_t n = b.size();
    b.gram.assign(n * n, 0.0);
    parallel_for(n, [&](std::size_t i) {
        for (std::size_t j = i; j < n; ++j) {
            double v = b.h1_inner(i, j, nt_quad, na_quad);
            b.gram[i * n + j] = v;
            b.gram[j * n + i] = v;
        }
    });

    Eigen::MatrixXd G = Eigen::Map<Eigen::MatrixXd>(b.gram.data(), n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success)
        throw ValidityError("probe basis: Gram matrix is not positive definite");
    return b;
}

DNMatrix assemble_dn_matrix(const MetricField& g, const ProbeBasis& basis, const SolverGrid& grid,
                            double out_dt, int jobs) {
    WaveSolver solver(g, grid);
    DNMatrix m;
    m.basis = basis;
    m.metric_fingerprint = g.fingerprint();
    {
        std::ostringstream os;
        os << grid.n_radial << "x" << grid.n_angular << ",stretch=" << grid.stretch
           << ",cfl=" << grid.cfl_safety << ",inner=" << grid.inner_radius;
        m.grid_fingerprint = os.str();
    }
    m.n_basis = basis.size();

    // one forward solve per basis element
    std::vector<BoundaryTrace> traces(basis.size());
    parallel_for(basis.size(), [&](std::size_t k) {
        auto f = [&, k](double t, double th) -> cplx { return basis.value(k, t, th); };
        traces[k] = dn_apply_pinned(solver, f, basis.T, out_dt);
    }, jobs);

    m.n_time_out = traces[0].n_time();
    m.n_boundary = traces[0].n_boundary();
    m.out_dt = traces[0].dt;
    m.rows = m.n_time_out * m.n_boundary;
    m.columns.resize(m.rows * m.n_basis);
    for (std::size_t k = 0; k < basis.size(); ++k) {
        if (traces[k].values.size() != m.rows)
            throw NumericError("dn matrix: inconsistent trace sizes across columns");
        std::copy(traces[k].values.begin(), traces[k].values.end(),
                  m.columns.begin() + k * m.rows);
    }
    // L2 weights: trapezoid in time x uniform angle
    m.weights.resize(m.rows);
    double ha = 2.0 * pi / static_cast<double>(m.n_boundary);
    for (std::size_t r = 0; r < m.rows; ++r) {
        std::size_t kt = r / m.n_boundary;
        double wt = (kt == 0 || kt == m.n_time_out - 1) ? 0.5 : 1.0;
        m.weights[r] = wt * m.out_dt * ha;
    }
    return m;
}

void DNMatrix::save(const std::string& csv_path, const std::string& json_sidecar_path) const {
    std::ofstream out(csv_path);
    if (!out) throw ConfigError("cannot open for writing: " + csv_path);
    char buf[64];
    out << "row";
    for (std::size_t k = 0; k < n_basis; ++k) out << ",re_" << k << ",im_" << k;
    out << "\n";
    for (std::size_t r = 0; r < rows; ++r) {
        out << r;
        for (std::size_t k = 0; k < n_basis; ++k) {
            std::snprintf(buf, sizeof buf, ",%.12g,%.12g", at(r, k).real(), at(r, k).imag());
            out << buf;
        }
        out << "\n";
    }
    nlohmann::json j;
    j["rows"] = rows;
    j["n_basis"] = n_basis;
    j["out_dt"] = out_dt;
    j["n_time_out"] = n_time_out;
    j["n_boundary"] = n_boundary;
    j["metric"] = metric_fingerprint;
    j["grid"] = grid_fingerprint;
    j["basis"] = {{"eps", basis.eps},
                  {"T", basis.T},
                  {"n_elements", basis.size()}};
    std::ofstream js(json_sidecar_path);
    if (!js) throw ConfigError("cannot open for writing: " + json_sidecar_path);
    js << j.dump(2) << "\n";
}

DnDistanceResult dn_distance(const DNMatrix& a, const DNMatrix& b, double tol,
                             std::uint64_t seed) {
    if (a.n_basis != b.n_basis || a.rows != b.rows || a.out_dt != b.out_dt)
        throw ContractError("dn_distance: matrices do not share basis and output grid");
    std::size_t K = a.n_basis;

    // M = D^* W D on the shared basis
    Eigen::MatrixXcd D(a.rows, K);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t r = 0; r < a.rows; ++r)
            D(r, k) = (a.at(r, k) - b.at(r, k)) * std::sqrt(a.weights[r]);
    Eigen::MatrixXcd M = D.adjoint() * D;

    Eigen::MatrixXd G = Eigen::Map<const Eigen::MatrixXd>(a.basis.gram.data(), K, K);
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) throw ValidityError("dn_distance: Gram not SPD");

    // power iteration on G^{-1} M (self-adjoint in the G inner product)
    std::mt19937_64 rng(seed_stream(seed, "dn_distance_power"));
    std::normal_distribution<double> nd;
    Eigen::VectorXcd y(K);
    for (std::size_t k = 0; k < K; ++k) y(k) = cplx(nd(rng), nd(rng));

    double prev = 0.0;
    DnDistanceResult res;
    for (int it = 0; it < 2000; ++it) {
        Eigen::VectorXcd z = M * y;
        Eigen::VectorXcd w = llt.solve(z);
        double rayleigh = (y.adjoint() * z)(0).real() / (y.adjoint() * (G * y))(0).real();
        double nrm = std::sqrt((w.adjoint() * (G * w))(0).real());
        if (nrm == 0.0) {
            res.delta = 0.0;
            res.iterations = it;
            res.maximizer.assign(K, 0.0);
            return res;
        }
        y = w / nrm;
        res.iterations = it + 1;
        if (it > 2 && std::abs(rayleigh - prev) <= tol * std::max(rayleigh, 1e-30)) {
            prev = rayleigh;
            break;
        }
        prev = rayleigh;
    }
    res.delta = std::sqrt(std::max(0.0, prev));
    res.maximizer.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) res.maximizer[k] = y(k);
    return res;
}

DNMatrix restrict_basis(const DNMatrix& m, const std::vector<std::size_t>& keep) {
    DNMatrix r = m;
    r.n_basis = keep.size();
    r.columns.resize(m.rows * keep.size());
    r.basis.elements.clear();
    r.basis.gram.assign(keep.size() * keep.size(), 0.0);
    for (std::size_t i = 0; i < keep.size(); ++i) {
        r.basis.elements.push_back(m.basis.elements[keep[i]]);
        for (std::size_t j = 0; j < keep.size(); ++j)
            r.basis.gram[i * keep.size() + j] = m.basis.gram_at(keep[i], keep[j]);
        std::copy(m.columns.begin() + keep[i] * m.rows, m.columns.begin() + (keep[i] + 1) * m.rows,
                  r.columns.begin() + i * m.rows);
    }
    return r;
}

}  // namespace dnlab
