#include "dnlab/core.hpp"

#include <mutex>
#include <thread>

namespace dnlab {

std::uint64_t seed_stream(std::uint64_t seed, const std::string& purpose) {
    // FNV-1a over the purpose tag, mixed with the user seed
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : purpose) {
        h ^= c;
        h *= 1099511628211ull;
    }
    h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int jobs) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    unsigned nw = jobs > 0 ? static_cast<unsigned>(jobs) : (hw > 0 ? hw : 1);
    if (nw > n) nw = static_cast<unsigned>(n);
    if (nw <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(nw);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (unsigned w = 0; w < nw; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += nw) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

PowerFit fit_power_law(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ContractError("fit_power_law: need matching arrays with >= 2 points");
    std::size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] <= 0.0 || y[i] <= 0.0)
            throw DomainError("fit_power_law: nonpositive sample");
        double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly; syy += ly * ly;
    }
    double dn = static_cast<double>(n);
    double vxx = sxx - sx * sx / dn;
    double vxy = sxy - sx * sy / dn;
    double vyy = syy - sy * sy / dn;
    PowerFit fit;
    fit.exponent = vxy / vxx;
    fit.log_constant = (sy - fit.exponent * sx) / dn;
    fit.r2 = vyy > 0.0 ? (vxy * vxy) / (vxx * vyy) : 1.0;
    return fit;
}

}  // namespace dnlab
