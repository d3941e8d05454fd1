#include "dnlab/trace.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace dnlab {

double BoundaryTrace::l2_norm() const {
    std::size_t nt = n_time(), nb = n_boundary();
    if (nt == 0) return 0.0;
    double htheta = 2.0 * pi / static_cast<double>(nb);
    double acc = 0.0;
    for (std::size_t k = 0; k < nt; ++k) {
        double wt = (k == 0 || k == nt - 1) ? 0.5 : 1.0;
        double row = 0.0;
        for (std::size_t j = 0; j < nb; ++j) row += std::norm(at(k, j));
        acc += wt * row;
    }
    return std::sqrt(acc * dt * htheta);
}

double BoundaryTrace::max_abs() const {
    double m = 0.0;
    for (const cplx& v : values) m = std::max(m, std::abs(v));
    return m;
}

void BoundaryTrace::validate_probe_support(double eps, double tol) const {
    std::size_t nt = n_time(), nb = n_boundary();
    for (std::size_t j = 0; j < nb; ++j)
        if (std::abs(at(0, j)) > tol)
            throw ValidityError("probe data must vanish at t=0");
    for (std::size_t k = 0; k < nt; ++k) {
        if (time_of(k) <= eps) continue;
        for (std::size_t j = 0; j < nb; ++j)
            if (std::abs(at(k, j)) > tol) {
                std::ostringstream os;
                os << "probe data not supported in [0," << eps << "]: nonzero at t="
                   << time_of(k);
                throw ValidityError(os.str());
            }
    }
}

void BoundaryTrace::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.12g,%zu", n_time(), dt, n_boundary());
    out << buf;
    for (double a : angles) {
        std::snprintf(buf, sizeof buf, ",%.12g", a);
        out << buf;
    }
    out << "\n";
    for (std::size_t k = 0; k < n_time(); ++k) {
        std::snprintf(buf, sizeof buf, "%.12g", time_of(k));
        out << buf;
        for (std::size_t j = 0; j < n_boundary(); ++j) {
            std::snprintf(buf, sizeof buf, ",%.12g,%.12g", at(k, j).real(), at(k, j).imag());
            out << buf;
        }
        out << "\n";
    }
}

BoundaryTrace BoundaryTrace::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace file: " + path);
    BoundaryTrace t;
    std::string line, tok;
    if (!std::getline(in, line)) throw ConfigError("empty trace file: " + path);
    std::stringstream hs(line);
    std::getline(hs, tok, ',');
    std::size_t nt = std::stoul(tok);
    std::getline(hs, tok, ',');
    t.dt = std::stod(tok);
    std::getline(hs, tok, ',');
    std::size_t nb = std::stoul(tok);
    for (std::size_t j = 0; j < nb; ++j) {
        std::getline(hs, tok, ',');
        t.angles.push_back(std::stod(tok));
    }
    t.values.resize(nt * nb);
    for (std::size_t k = 0; k < nt; ++k) {
        if (!std::getline(in, line)) throw ConfigError("truncated trace file: " + path);
        std::stringstream rs(line);
        std::getline(rs, tok, ',');
        for (std::size_t j = 0; j < nb; ++j) {
            std::getline(rs, tok, ',');
            double re = std::stod(tok);
            std::getline(rs, tok, ',');
            double im = std::stod(tok);
            t.at(k, j) = {re, im};
        }
    }
    return t;
}

}  // namespace dnlab
