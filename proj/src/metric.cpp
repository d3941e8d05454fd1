#include "dnlab/metric.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dnlab {

// ---------------------------------------------------------------------------
// GaussBump: A exp(-|x-c|^2 / (2 sigma^2)) with exact derivatives to order 4

double GaussBump::value(Vec2 p) const {
    Vec2 z = p - center;
    return amplitude * std::exp(-0.5 * z.norm2() / (sigma * sigma));
}

Vec2 GaussBump::grad(Vec2 p) const {
    Vec2 z = p - center;
    double g = value(p), is2 = 1.0 / (sigma * sigma);
    return {-z.x * is2 * g, -z.y * is2 * g};
}

Sym2 GaussBump::hess(Vec2 p) const {
    Vec2 z = p - center;
    double g = value(p), is2 = 1.0 / (sigma * sigma);
    return {(z.x * z.x * is2 - 1.0) * is2 * g,
            z.x * z.y * is2 * is2 * g,
            (z.y * z.y * is2 - 1.0) * is2 * g};
}

std::array<Sym2, 2> GaussBump::d3(Vec2 p) const {
    Vec2 z = p - center;
    double g = value(p), is2 = 1.0 / (sigma * sigma);
    double zc[2] = {z.x, z.y};
    std::array<Sym2, 2> out;
    for (int i = 0; i < 2; ++i) {
        double m[2][2];
        for (int j = 0; j < 2; ++j)
            for (int k = j; k < 2; ++k) {
                double del = (i == j ? zc[k] : 0.0) + (i == k ? zc[j] : 0.0) + (j == k ? zc[i] : 0.0);
                m[j][k] = (-zc[i] * zc[j] * zc[k] * is2 + del) * is2 * is2 * g;
            }
        out[i] = Sym2{m[0][0], m[0][1], m[1][1]};
    }
    return out;
}

std::array<std::array<Sym2, 2>, 2> GaussBump::d4(Vec2 p) const {
    Vec2 z = p - center;
    double g = value(p), is2 = 1.0 / (sigma * sigma);
    double zc[2] = {z.x, z.y};
    auto kd = [](int a, int b) { return a == b ? 1.0 : 0.0; };
    std::array<std::array<Sym2, 2>, 2> out;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double m[2][2];
            for (int k = 0; k < 2; ++k)
                for (int l = k; l < 2; ++l) {
                    double quart = zc[i] * zc[j] * zc[k] * zc[l] * is2 * is2;
                    double pair2 = kd(i, j) * zc[k] * zc[l] + kd(i, k) * zc[j] * zc[l] +
                                   kd(i, l) * zc[j] * zc[k] + kd(j, k) * zc[i] * zc[l] +
                                   kd(j, l) * zc[i] * zc[k] + kd(k, l) * zc[i] * zc[j];
                    double pair1 = kd(i, j) * kd(k, l) + kd(i, k) * kd(j, l) + kd(i, l) * kd(j, k);
                    m[k][l] = (quart - pair2 * is2 + pair1) * is2 * is2 * g;
                }
            out[i][j] = Sym2{m[0][0], m[0][1], m[1][1]};
        }
    return out;
}

// ---------------------------------------------------------------------------
// ScalarField

double ScalarField::value(Vec2 p) const {
    double r2 = p.norm2();
    double v = c0 + c2 * r2 + c4 * r2 * r2;
    for (const auto& b : bumps) v += b.value(p);
    return v;
}

Vec2 ScalarField::grad(Vec2 p) const {
    double r2 = p.norm2();
    double dr = 2.0 * c2 + 4.0 * c4 * r2;
    Vec2 g{dr * p.x, dr * p.y};
    for (const auto& b : bumps) g += b.grad(p);
    return g;
}

Sym2 ScalarField::hess(Vec2 p) const {
    double r2 = p.norm2();
    double a = 2.0 * c2 + 4.0 * c4 * r2;
    Sym2 h{a + 8.0 * c4 * p.x * p.x, 8.0 * c4 * p.x * p.y, a + 8.0 * c4 * p.y * p.y};
    for (const auto& b : bumps) h = h + b.hess(p);
    return h;
}

std::string ScalarField::describe() const {
    std::ostringstream os;
    os << "c0=" << c0;
    if (c2 != 0.0) os << ",c2=" << c2;
    if (c4 != 0.0) os << ",c4=" << c4;
    for (const auto& b : bumps)
        os << ",bump(a=" << b.amplitude << ",c=(" << b.center.x << "," << b.center.y
           << "),s=" << b.sigma << ")";
    return os.str();
}

// ---------------------------------------------------------------------------
// TensorBump

TensorBump TensorBump::plain(Sym2 coeffs, Vec2 center, double sigma) {
    TensorBump t;
    t.kind = Kind::Plain;
    t.coeffs = coeffs;
    t.bump = GaussBump{1.0, center, sigma};
    return t;
}

TensorBump TensorBump::solenoidal(double amp, Vec2 center, double sigma) {
    TensorBump t;
    t.kind = Kind::SolenoidalStream;
    // scale the stream potential so the tensor magnitude peaks near amp
    t.stream = {GaussBump{amp * sigma * sigma, center, sigma}};
    return t;
}

// h = rot rot psi: h_11 = psi_yy, h_12 = -psi_xy, h_22 = psi_xx (divergence-free)
Sym2 TensorBump::value(Vec2 p) const {
    if (kind == Kind::Plain) return coeffs * bump.value(p);
    Sym2 h{0, 0, 0};
    for (const auto& s : stream) {
        Sym2 hs = s.hess(p);
        h = h + Sym2{hs.yy, -hs.xy, hs.xx};
    }
    return h;
}

std::array<Sym2, 2> TensorBump::d1(Vec2 p) const {
    std::array<Sym2, 2> out{Sym2{0, 0, 0}, Sym2{0, 0, 0}};
    if (kind == Kind::Plain) {
        Vec2 g = bump.grad(p);
        out[0] = coeffs * g.x;
        out[1] = coeffs * g.y;
        return out;
    }
    for (const auto& s : stream) {
        auto t3 = s.d3(p);  // t3[i](j,k) = psi_{ijk}
        for (int k = 0; k < 2; ++k) {
            // d_k h = rot rot (d_k psi)
            Sym2 hk{t3[k](1, 1), -t3[k](0, 1), t3[k](0, 0)};
            out[k] = out[k] + hk;
        }
    }
    return out;
}

std::array<std::array<Sym2, 2>, 2> TensorBump::d2(Vec2 p) const {
    std::array<std::array<Sym2, 2>, 2> out{};
    if (kind == Kind::Plain) {
        Sym2 hb = bump.hess(p);
        for (int k = 0; k < 2; ++k)
            for (int l = 0; l < 2; ++l) out[k][l] = coeffs * hb(k, l);
        return out;
    }
    for (const auto& s : stream) {
        auto t4 = s.d4(p);  // t4[i][j](k,l) = psi_{ijkl}
        for (int k = 0; k < 2; ++k)
            for (int l = 0; l < 2; ++l) {
                Sym2 hkl{t4[k][l](1, 1), -t4[k][l](0, 1), t4[k][l](0, 0)};
                out[k][l] = out[k][l] + hkl;
            }
    }
    return out;
}

std::string TensorBump::describe() const {
    std::ostringstream os;
    if (kind == Kind::Plain) {
        os << "plain(c=[" << coeffs.xx << "," << coeffs.xy << "," << coeffs.yy << "],x=("
           << bump.center.x << "," << bump.center.y << "),s=" << bump.sigma << ")";
    } else {
        os << "solenoidal(";
        for (const auto& s : stream)
            os << "a=" << s.amplitude << ",x=(" << s.center.x << "," << s.center.y
               << "),s=" << s.sigma << ";";
        os << ")";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// DiffeoField

DiffeoField::DiffeoField(std::vector<Mode> modes, int boundary_flatness)
    : modes_(std::move(modes)), flatness_(boundary_flatness) {
    if (flatness_ < 1) throw ConfigError("DiffeoField: boundary flatness must be >= 1");
}

DiffeoField DiffeoField::bump(Vec2 direction, double amplitude, Vec2 center, double sigma,
                              int boundary_flatness) {
    Mode m;
    m.direction = direction;
    m.profile = GaussBump{amplitude, center, sigma};
    return DiffeoField({m}, boundary_flatness);
}

DiffeoField DiffeoField::rotation(double angle) {
    DiffeoField d;
    d.rotation_ = angle;
    return d;
}

DiffeoField DiffeoField::compose(DiffeoField outer, DiffeoField inner) {
    DiffeoField d;
    d.outer_ = std::make_shared<DiffeoField>(std::move(outer));
    d.inner_ = std::make_shared<DiffeoField>(std::move(inner));
    return d;
}

bool DiffeoField::boundary_identity() const {
    if (outer_) return outer_->boundary_identity() && inner_->boundary_identity();
    return rotation_ == 0.0;
}

Vec2 DiffeoField::apply(Vec2 p) const {
    if (outer_) return outer_->apply(inner_->apply(p));
    if (rotation_ != 0.0) {
        double c = std::cos(rotation_), s = std::sin(rotation_);
        return {c * p.x - s * p.y, s * p.x + c * p.y};
    }
    Vec2 q = p;
    double w = 1.0 - p.norm2();
    double wp = std::pow(w, flatness_);
    for (const auto& m : modes_) q += m.direction * (m.profile.value(p) * wp);
    return q;
}

Mat2 DiffeoField::jacobian(Vec2 p) const {
    if (outer_) return outer_->jacobian(inner_->apply(p)).mul(inner_->jacobian(p));
    if (rotation_ != 0.0) {
        double c = std::cos(rotation_), s = std::sin(rotation_);
        return {c, -s, s, c};
    }
    Mat2 j = Mat2::identity();
    double w = 1.0 - p.norm2();
    double wp = std::pow(w, flatness_);
    double wp1 = flatness_ * std::pow(w, flatness_ - 1);
    for (const auto& m : modes_) {
        double gv = m.profile.value(p);
        Vec2 gg = m.profile.grad(p);
        // grad of G * (1-r^2)^p
        Vec2 gr{gg.x * wp - gv * wp1 * 2.0 * p.x, gg.y * wp - gv * wp1 * 2.0 * p.y};
        j.a += m.direction.x * gr.x;
        j.b += m.direction.x * gr.y;
        j.c += m.direction.y * gr.x;
        j.d += m.direction.y * gr.y;
    }
    return j;
}

double DiffeoField::max_boundary_displacement(int samples) const {
    double worst = 0.0;
    for (int i = 0; i < samples; ++i) {
        double th = 2.0 * pi * i / samples;
        Vec2 p{std::cos(th), std::sin(th)};
        worst = std::max(worst, (apply(p) - p).norm());
    }
    return worst;
}

// ---------------------------------------------------------------------------
// MetricField implementation hierarchy

struct MetricField::Impl {
    virtual ~Impl() = default;
    virtual Sym2 g(Vec2 p) const = 0;
    virtual bool has_d1() const { return false; }
    virtual std::array<Sym2, 2> d1(Vec2) const { throw CapabilityError("metric: no analytic d1"); }
    virtual bool has_d2() const { return false; }
    virtual std::array<std::array<Sym2, 2>, 2> d2(Vec2) const {
        throw CapabilityError("metric: no analytic d2");
    }
};

namespace {

constexpr double kFdStep = 2e-4;

struct EuclideanImpl final : MetricField::Impl {
    Sym2 g(Vec2) const override { return Sym2::identity(); }
    bool has_d1() const override { return true; }
    std::array<Sym2, 2> d1(Vec2) const override { return {Sym2{0, 0, 0}, Sym2{0, 0, 0}}; }
    bool has_d2() const override { return true; }
    std::array<std::array<Sym2, 2>, 2> d2(Vec2) const override { return {}; }
};

struct ConformalImpl final : MetricField::Impl {
    ScalarField c;
    explicit ConformalImpl(ScalarField c_) : c(std::move(c_)) {}

    Sym2 g(Vec2 p) const override {
        double v = c.value(p);
        return {v * v, 0.0, v * v};
    }
    bool has_d1() const override { return true; }
    std::array<Sym2, 2> d1(Vec2 p) const override {
        double v = c.value(p);
        Vec2 gr = c.grad(p);
        return {Sym2{2 * v * gr.x, 0, 2 * v * gr.x}, Sym2{2 * v * gr.y, 0, 2 * v * gr.y}};
    }
    bool has_d2() const override { return true; }
    std::array<std::array<Sym2, 2>, 2> d2(Vec2 p) const override {
        double v = c.value(p);
        Vec2 gr = c.grad(p);
        Sym2 h = c.hess(p);
        std::array<std::array<Sym2, 2>, 2> out;
        double grc[2] = {gr.x, gr.y};
        for (int k = 0; k < 2; ++k)
            for (int l = 0; l < 2; ++l) {
                double s = 2.0 * (grc[k] * grc[l] + v * h(k, l));
                out[k][l] = Sym2{s, 0.0, s};
            }
        return out;
    }
};

struct PerturbedImpl final : MetricField::Impl {
    std::shared_ptr<const MetricField::Impl> base;
    double eps;
    TensorBump h;
    PerturbedImpl(std::shared_ptr<const MetricField::Impl> b, double e, TensorBump h_)
        : base(std::move(b)), eps(e), h(std::move(h_)) {}

    Sym2 g(Vec2 p) const override { return base->g(p) + h.value(p) * eps; }
    bool has_d1() const override { return base->has_d1(); }
    std::array<Sym2, 2> d1(Vec2 p) const override {
        auto b = base->d1(p);
        auto hd = h.d1(p);
        return {b[0] + hd[0] * eps, b[1] + hd[1] * eps};
    }
    bool has_d2() const override { return base->has_d2(); }
    std::array<std::array<Sym2, 2>, 2> d2(Vec2 p) const override {
        auto b = base->d2(p);
        auto hd = h.d2(p);
        for (int k = 0; k < 2; ++k)
            for (int l = 0; l < 2; ++l) b[k][l] = b[k][l] + hd[k][l] * eps;
        return b;
    }
};

struct PullbackImpl final : MetricField::Impl {
    DiffeoField psi;
    std::shared_ptr<const MetricField::Impl> base;
    PullbackImpl(DiffeoField psi_, std::shared_ptr<const MetricField::Impl> b)
        : psi(std::move(psi_)), base(std::move(b)) {}

    Sym2 g(Vec2 p) const override {
        Mat2 j = psi.jacobian(p);
        if (j.det() <= 0.0) {
            std::ostringstream os;
            os << "pullback: non-invertible Jacobian at (" << p.x << "," << p.y << ")";
            throw GeometryError(os.str());
        }
        return j.congruent(base->g(psi.apply(p)));
    }
};

struct GluedImpl final : MetricField::Impl {
    std::shared_ptr<const MetricField::Impl> inner;   // g, kept near the boundary
    std::shared_ptr<const MetricField::Impl> outer;   // gtilde, kept in the deep interior
    double width;
    GluedImpl(std::shared_ptr<const MetricField::Impl> g,
              std::shared_ptr<const MetricField::Impl> gt, double w)
        : inner(std::move(g)), outer(std::move(gt)), width(w) {}

    Sym2 g(Vec2 p) const override {
        double dist = 1.0 - p.norm();  // Euclidean distance to the boundary circle
        double chi = plateau_cutoff(dist / width, 1.0, 2.0);
        if (chi >= 1.0) return inner->g(p);
        if (chi <= 0.0) return outer->g(p);
        Sym2 a = inner->g(p), b = outer->g(p);
        return b + (a - b) * chi;
    }
};

// Catmull-Rom cubic with analytic derivative
inline void cr_weights(double t, double w[4], double dw[4]) {
    w[0] = 0.5 * (-t + 2 * t * t - t * t * t);
    w[1] = 0.5 * (2 - 5 * t * t + 3 * t * t * t);
    w[2] = 0.5 * (t + 4 * t * t - 3 * t * t * t);
    w[3] = 0.5 * (-t * t + t * t * t);
    dw[0] = 0.5 * (-1 + 4 * t - 3 * t * t);
    dw[1] = 0.5 * (-10 * t + 9 * t * t);
    dw[2] = 0.5 * (1 + 8 * t - 9 * t * t);
    dw[3] = 0.5 * (-2 * t + 3 * t * t);
}

struct GridImpl final : MetricField::Impl {
    GridMetricData data;
    double hx, hy;
    explicit GridImpl(GridMetricData d) : data(std::move(d)) {
        if (data.nx < 4 || data.ny < 4) throw ConfigError("grid metric: need at least 4x4 samples");
        hx = (data.x1 - data.x0) / (data.nx - 1);
        hy = (data.y1 - data.y0) / (data.ny - 1);
    }

    Sym2 g(Vec2 p) const override {
        Sym2 v, dx, dy;
        interp(p, v, dx, dy);
        return v;
    }
    bool has_d1() const override { return true; }
    std::array<Sym2, 2> d1(Vec2 p) const override {
        Sym2 v, dx, dy;
        interp(p, v, dx, dy);
        return {dx, dy};
    }

    void interp(Vec2 p, Sym2& v, Sym2& ddx, Sym2& ddy) const {
        // extension beyond the sampled box: clamp (constant along the outward direction)
        double fx = std::clamp((p.x - data.x0) / hx, 0.0, data.nx - 1.000001);
        double fy = std::clamp((p.y - data.y0) / hy, 0.0, data.ny - 1.000001);
        int i = std::clamp(static_cast<int>(fx), 1, data.nx - 3);
        int j = std::clamp(static_cast<int>(fy), 1, data.ny - 3);
        double tx = fx - i, ty = fy - j;
        double wx[4], dwx[4], wy[4], dwy[4];
        cr_weights(tx, wx, dwx);
        cr_weights(ty, wy, dwy);
        double acc[3] = {0, 0, 0}, accx[3] = {0, 0, 0}, accy[3] = {0, 0, 0};
        for (int b = 0; b < 4; ++b)
            for (int a = 0; a < 4; ++a) {
                const Sym2& s = data.at(i + a - 1, j + b - 1);
                double comp[3] = {s.xx, s.xy, s.yy};
                for (int m = 0; m < 3; ++m) {
                    acc[m] += wx[a] * wy[b] * comp[m];
                    accx[m] += dwx[a] * wy[b] * comp[m];
                    accy[m] += wx[a] * dwy[b] * comp[m];
                }
            }
        v = {acc[0], acc[1], acc[2]};
        ddx = Sym2{accx[0], accx[1], accx[2]} * (1.0 / hx);
        ddy = Sym2{accy[0], accy[1], accy[2]} * (1.0 / hy);
    }
};

std::array<Sym2, 2> fd_d1(const MetricField::Impl& impl, Vec2 p, double h) {
    std::array<Sym2, 2> out;
    for (int k = 0; k < 2; ++k) {
        Vec2 e = k == 0 ? Vec2{1, 0} : Vec2{0, 1};
        Sym2 p1 = impl.g(p + e * h), m1 = impl.g(p - e * h);
        Sym2 p2 = impl.g(p + e * (2 * h)), m2 = impl.g(p - e * (2 * h));
        out[k] = ((p1 - m1) * 8.0 - (p2 - m2)) * (1.0 / (12.0 * h));
    }
    return out;
}

}  // namespace

MetricField::MetricField(std::shared_ptr<const Impl> impl, int smoothness, std::string fp)
    : impl_(std::move(impl)), smoothness_(smoothness), fingerprint_(std::move(fp)) {}

MetricField::MetricField() : MetricField(std::make_shared<EuclideanImpl>(), 10, "euclidean") {}

MetricField MetricField::euclidean() { return MetricField(); }

MetricField MetricField::conformal(ScalarField c) {
    std::string fp = "conformal(" + c.describe() + ")";
    return MetricField(std::make_shared<ConformalImpl>(std::move(c)), 10, fp);
}

MetricField MetricField::perturbed(MetricField base, double eps, TensorBump h) {
    std::ostringstream fp;
    fp << "perturbed(" << base.fingerprint() << ",eps=" << eps << "," << h.describe() << ")";
    auto m = MetricField(std::make_shared<PerturbedImpl>(base.impl_, eps, std::move(h)),
                         base.smoothness(), fp.str());
    if (eps != 0.0) m.validate_spd(48);
    return m;
}

MetricField MetricField::pullback(DiffeoField psi, MetricField g) {
    if (psi.is_identity()) return g;
    std::string fp = "pullback(" + g.fingerprint() + ")";
    auto m = MetricField(std::make_shared<PullbackImpl>(std::move(psi), g.impl_),
                         std::max(1, g.smoothness() - 1), fp);
    return m;
}

MetricField MetricField::glued(MetricField g, MetricField gtilde, double width) {
    if (width <= 0.0) throw ConfigError("metric glue: width must be positive");
    std::string fp = "glued(" + g.fingerprint() + "|" + gtilde.fingerprint() +
                     ",w=" + std::to_string(width) + ")";
    auto m = MetricField(std::make_shared<GluedImpl>(g.impl_, gtilde.impl_, width),
                         std::min(g.smoothness(), gtilde.smoothness()), fp);
    m.validate_spd(48);
    return m;
}

MetricField MetricField::from_grid(GridMetricData data) {
    std::ostringstream fp;
    fp << "grid(" << data.nx << "x" << data.ny << ")";
    return MetricField(std::make_shared<GridImpl>(std::move(data)), 2, fp.str());
}

Sym2 MetricField::at(Vec2 p) const { return impl_->g(p); }

Sym2 MetricField::inv_at(Vec2 p) const { return impl_->g(p).inverse(); }

double MetricField::det_at(Vec2 p) const { return impl_->g(p).det(); }

Sym2 MetricField::eval_checked(Vec2 p) const {
    if (p.norm() > 1.0 + 1e-12) {
        std::ostringstream os;
        os << "metric eval: point (" << p.x << "," << p.y << ") outside the closed unit disk";
        throw DomainError(os.str());
    }
    Sym2 g = impl_->g(p);
    if (g.min_eig() <= 0.0) {
        std::ostringstream os;
        os << "metric eval: non-SPD sample at (" << p.x << "," << p.y << ")";
        throw ValidityError(os.str());
    }
    return g;
}

std::array<Sym2, 2> MetricField::d1_at(Vec2 p) const {
    if (smoothness_ < 1) throw CapabilityError("metric: smoothness budget < 1");
    if (impl_->has_d1()) return impl_->d1(p);
    return fd_d1(*impl_, p, kFdStep);
}

std::array<std::array<Sym2, 2>, 2> MetricField::d2_at(Vec2 p) const {
    if (smoothness_ < 2) throw CapabilityError("metric: smoothness budget < 2");
    if (impl_->has_d2()) return impl_->d2(p);
    // 4th-order central differences of d1 (exact or itself FD-backed)
    double h = impl_->has_d1() ? 1e-4 : 5e-4;
    std::array<std::array<Sym2, 2>, 2> out;
    for (int k = 0; k < 2; ++k) {
        Vec2 e = k == 0 ? Vec2{1, 0} : Vec2{0, 1};
        auto p1 = d1_at(p + e * h), m1 = d1_at(p - e * h);
        auto p2 = d1_at(p + e * (2 * h)), m2 = d1_at(p - e * (2 * h));
        for (int l = 0; l < 2; ++l)
            out[k][l] = ((p1[l] - m1[l]) * 8.0 - (p2[l] - m2[l])) * (1.0 / (12.0 * h));
    }
    return out;
}

void MetricField::validate_spd(int n) const {
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            Vec2 p{-1.0 + 2.0 * i / (n - 1), -1.0 + 2.0 * j / (n - 1)};
            if (p.norm() > 1.0) continue;
            Sym2 g = impl_->g(p);
            if (g.min_eig() <= 0.0 || g.det() <= 0.0) {
                std::ostringstream os;
                os << "metric not SPD at (" << p.x << "," << p.y << "): min eig " << g.min_eig();
                throw ValidityError(os.str());
            }
        }
}

GridMetricData MetricField::sample_grid(int nx, int ny, double pad) const {
    GridMetricData d;
    d.nx = nx;
    d.ny = ny;
    d.x0 = -1.0 - pad;
    d.y0 = -1.0 - pad;
    d.x1 = 1.0 + pad;
    d.y1 = 1.0 + pad;
    d.samples.resize(static_cast<std::size_t>(nx) * ny);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            Vec2 p{d.x0 + (d.x1 - d.x0) * i / (nx - 1), d.y0 + (d.y1 - d.y0) * j / (ny - 1)};
            d.at(i, j) = impl_->g(p);
        }
    return d;
}

void MetricField::save_text(const std::string& path, int nx, int ny) const {
    GridMetricData d = sample_grid(nx, ny);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    char line[256];
    std::snprintf(line, sizeof line, "%d %d %.12g %.12g %.12g %.12g\n", d.nx, d.ny, d.x0, d.y0,
                  d.x1, d.y1);
    out << line;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            Vec2 p{d.x0 + (d.x1 - d.x0) * i / (nx - 1), d.y0 + (d.y1 - d.y0) * j / (ny - 1)};
            const Sym2& s = d.at(i, j);
            std::snprintf(line, sizeof line, "%.12g %.12g %.17g %.17g %.17g\n", p.x, p.y, s.xx,
                          s.xy, s.yy);
            out << line;
        }
}

MetricField MetricField::load_text(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open metric file: " + path);
    GridMetricData d;
    in >> d.nx >> d.ny >> d.x0 >> d.y0 >> d.x1 >> d.y1;
    if (!in || d.nx < 4 || d.ny < 4) throw ConfigError("bad metric file header: " + path);
    d.samples.resize(static_cast<std::size_t>(d.nx) * d.ny);
    for (int j = 0; j < d.ny; ++j)
        for (int i = 0; i < d.nx; ++i) {
            double x, y;
            Sym2 s;
            in >> x >> y >> s.xx >> s.xy >> s.yy;
            d.at(i, j) = s;
        }
    if (!in) throw ConfigError("truncated metric file: " + path);
    return from_grid(std::move(d));
}

// ---------------------------------------------------------------------------
// connection and curvature

Christoffel christoffel(const MetricField& g, Vec2 p) {
    Sym2 ginv = g.inv_at(p);
    auto dg = g.d1_at(p);
    Christoffel gamma;
    for (int k = 0; k < 2; ++k) {
        double m[2][2];
        for (int i = 0; i < 2; ++i)
            for (int j = i; j < 2; ++j) {
                double s = 0.0;
                for (int l = 0; l < 2; ++l)
                    s += ginv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                m[i][j] = 0.5 * s;
            }
        gamma[k] = Sym2{m[0][0], m[0][1], m[1][1]};
    }
    return gamma;
}

double gauss_curvature(const MetricField& g, Vec2 p) {
    // R^rho_{sigma mu nu} contracted to the single sectional curvature of a surface
    Sym2 gm = g.at(p);
    Christoffel gam = christoffel(g, p);
    // derivatives of the Christoffels by central differences (exact-derivative
    // families make this ~1e-10 accurate)
    double h = 1e-5;
    Christoffel gxp = christoffel(g, p + Vec2{h, 0}), gxm = christoffel(g, p - Vec2{h, 0});
    Christoffel gyp = christoffel(g, p + Vec2{0, h}), gym = christoffel(g, p - Vec2{0, h});
    auto dgam = [&](int dir, int k, int i, int j) {
        if (dir == 0) return (gxp[k](i, j) - gxm[k](i, j)) / (2 * h);
        return (gyp[k](i, j) - gym[k](i, j)) / (2 * h);
    };
    // R^rho_{2 1 2} = d_1 Gamma^rho_{22} - d_2 Gamma^rho_{12}
    //                + Gamma^rho_{1l} Gamma^l_{22} - Gamma^rho_{2l} Gamma^l_{12}
    double Rr[2];
    for (int r = 0; r < 2; ++r) {
        double v = dgam(0, r, 1, 1) - dgam(1, r, 0, 1);
        for (int l = 0; l < 2; ++l) v += gam[r](0, l) * gam[l](1, 1) - gam[r](1, l) * gam[l](0, 1);
        Rr[r] = v;
    }
    double R1212 = gm(0, 0) * Rr[0] + gm(0, 1) * Rr[1];
    return R1212 / gm.det();
}

double laplace_beltrami(const MetricField& g, Vec2 p, Vec2 grad_u, Sym2 hess_u) {
    Sym2 ginv = g.inv_at(p);
    auto dg = g.d1_at(p);
    double det = g.at(p).det();
    // d_i det g = det g * tr(g^{-1} d_i g)
    double ddet[2];
    for (int i = 0; i < 2; ++i) {
        ddet[i] = det * (ginv.xx * dg[i].xx + 2.0 * ginv.xy * dg[i].xy + ginv.yy * dg[i].yy);
    }
    // d_i g^{ij} = -(g^{-1} d_i g g^{-1})^{ij}
    double div = 0.0;
    double gu[2] = {grad_u.x, grad_u.y};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            double dginv = 0.0;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) dginv -= ginv(i, a) * dg[i](a, b) * ginv(b, j);
            div += ginv(i, j) * hess_u(i, j) + dginv * gu[j] +
                   ginv(i, j) * 0.5 * (ddet[i] / det) * gu[j];
        }
    return div;
}

}  // namespace dnlab
