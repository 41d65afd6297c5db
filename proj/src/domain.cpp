#include "bsdelab/domain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bsdelab/errors.hpp"

namespace bsdelab {

namespace {

constexpr double kUnitNormalTol = 1e-9;
constexpr int kRetractionIterations = 50;
constexpr double kRetractionTol = 1e-10;
constexpr int kDykstraIterations = 20000;

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

DomainSpec DomainSpec::whole_space(int dim) {
    if (dim < 1) throw ConfigError("domain: dimension must be >= 1");
    DomainSpec d;
    d.kind_ = Kind::whole_space;
    d.dim_ = dim;
    return d;
}

DomainSpec DomainSpec::open_set(int dim, PointTest inside) {
    if (dim < 1) throw ConfigError("domain: dimension must be >= 1");
    if (!inside) throw ConfigError("domain: open set needs a membership test");
    DomainSpec d;
    d.kind_ = Kind::open_set;
    d.dim_ = dim;
    d.inside_ = std::move(inside);
    return d;
}

DomainSpec DomainSpec::polyhedron(std::vector<std::vector<double>> normals, std::vector<double> offsets) {
    if (normals.empty() || normals.size() != offsets.size()) {
        throw ConfigError("domain: polyhedron needs matching, nonempty normal and offset lists");
    }
    const std::size_t dim = normals.front().size();
    if (dim == 0) throw ConfigError("domain: polyhedron normals must be nonempty vectors");
    for (const auto& a : normals) {
        if (a.size() != dim) throw ConfigError("domain: polyhedron normals have inconsistent dimensions");
        const double len = std::sqrt(dot(a, a));
        if (std::abs(len - 1.0) > kUnitNormalTol) throw ConfigError("domain: polyhedron normals must have unit length");
    }
    for (double c : offsets) {
        if (!std::isfinite(c)) throw ConfigError("domain: polyhedron offsets must be finite");
    }
    DomainSpec d;
    d.kind_ = Kind::polyhedron;
    d.dim_ = static_cast<int>(dim);
    d.normals_ = std::move(normals);
    d.offsets_ = std::move(offsets);
    return d;
}

DomainSpec DomainSpec::interval(double c, double d) { return box({c}, {d}); }

DomainSpec DomainSpec::box(std::vector<double> lo, std::vector<double> hi) {
    if (lo.empty() || lo.size() != hi.size()) throw ConfigError("domain: box bounds must be nonempty and matching");
    std::vector<std::vector<double>> normals;
    std::vector<double> offsets;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (!(lo[i] < hi[i]) || !std::isfinite(lo[i]) || !std::isfinite(hi[i])) {
            throw ConfigError("domain: box needs finite lo < hi in every coordinate");
        }
        std::vector<double> e(lo.size(), 0.0);
        e[i] = 1.0;
        normals.push_back(e);
        offsets.push_back(hi[i]);
        e[i] = -1.0;
        normals.push_back(e);
        offsets.push_back(-lo[i]);
    }
    DomainSpec d = polyhedron(std::move(normals), std::move(offsets));
    d.box_ = true;
    d.lo_ = std::move(lo);
    d.hi_ = std::move(hi);
    return d;
}

DomainSpec DomainSpec::smooth(int dim, ScalarField w, VectorField grad_w) {
    if (dim < 1) throw ConfigError("domain: dimension must be >= 1");
    if (!w || !grad_w) throw ConfigError("domain: smooth domain needs both w and grad w");
    DomainSpec d;
    d.kind_ = Kind::smooth;
    d.dim_ = dim;
    d.w_ = std::move(w);
    d.grad_w_ = std::move(grad_w);
    return d;
}

DomainSpec DomainSpec::ball(std::vector<double> center, double radius) {
    if (center.empty()) throw ConfigError("domain: ball center must be nonempty");
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ConfigError("domain: ball radius must be positive");
    const int dim = static_cast<int>(center.size());
    auto w = [center, radius](std::span<const double> x) {
        double s = 0.0;
        for (std::size_t i = 0; i < center.size(); ++i) s += (x[i] - center[i]) * (x[i] - center[i]);
        return (radius * radius - s) / (2.0 * radius);
    };
    auto g = [center, radius](std::span<const double> x, std::span<double> out) {
        for (std::size_t i = 0; i < center.size(); ++i) out[i] = -(x[i] - center[i]) / radius;
    };
    return smooth(dim, w, g);
}

bool DomainSpec::contains(std::span<const double> x) const {
    switch (kind_) {
        case Kind::whole_space: return true;
        case Kind::open_set: return inside_(x);
        case Kind::polyhedron:
            for (std::size_t j = 0; j < normals_.size(); ++j) {
                if (!(dot(normals_[j], x) < offsets_[j])) return false;
            }
            return true;
        case Kind::smooth: return w_(x) > 0.0;
    }
    return false;
}

bool DomainSpec::contains_closed(std::span<const double> x, double tol) const {
    switch (kind_) {
        case Kind::whole_space: return true;
        case Kind::open_set: return inside_(x);
        case Kind::polyhedron:
            for (std::size_t j = 0; j < normals_.size(); ++j) {
                if (dot(normals_[j], x) > offsets_[j] + tol) return false;
            }
            return true;
        case Kind::smooth: return w_(x) >= -tol;
    }
    return false;
}

void DomainSpec::project(std::span<double> x) const {
    if (static_cast<int>(x.size()) != dim_) throw std::invalid_argument("project: dimension mismatch");
    switch (kind_) {
        case Kind::whole_space: return;
        case Kind::open_set: throw std::invalid_argument("project: an open set given by a membership test has no projection");
        case Kind::polyhedron: {
            if (box_) {
                for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo_[i], hi_[i]);
                return;
            }
            if (contains_closed(x, 0.0)) return;
            // Dykstra's alternating projections onto the half-spaces.
            const std::size_t faces = normals_.size();
            std::vector<double> cur(x.begin(), x.end());
            std::vector<double> inc(faces * x.size(), 0.0);
            std::vector<double> zbuf(x.size());
            for (int it = 0; it < kDykstraIterations; ++it) {
                double change = 0.0;
                for (std::size_t j = 0; j < faces; ++j) {
                    double* p = inc.data() + j * x.size();
                    for (std::size_t i = 0; i < x.size(); ++i) zbuf[i] = cur[i] + p[i];
                    const double excess = dot(normals_[j], zbuf) - offsets_[j];
                    for (std::size_t i = 0; i < x.size(); ++i) {
                        const double next = excess > 0.0 ? zbuf[i] - excess * normals_[j][i] : zbuf[i];
                        p[i] = zbuf[i] - next;
                        change = std::max(change, std::abs(next - cur[i]));
                        cur[i] = next;
                    }
                }
                if (change < 1e-15 && contains_closed(cur, 1e-12)) {
                    std::copy(cur.begin(), cur.end(), x.begin());
                    return;
                }
            }
            throw NumericalError("project: polyhedral projection did not converge");
        }
        case Kind::smooth: {
            double wx = w_(x);
            if (wx >= 0.0) return;
            std::vector<double> g(x.size()), trial(x.size());
            for (int it = 0; it < kRetractionIterations; ++it) {
                if (std::abs(wx) <= kRetractionTol) return;
                grad_w_(x, g);
                const double g2 = dot(g, g);
                if (!(g2 > 0.0) || !std::isfinite(g2)) throw NumericalError("project: vanishing gradient of w during retraction");
                double step = 1.0;
                double wt = wx;
                for (int half = 0; half < 30; ++half) {
                    for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] - step * wx * g[i] / g2;
                    wt = w_(trial);
                    if (std::abs(wt) < std::abs(wx)) break;
                    step *= 0.5;
                }
                std::copy(trial.begin(), trial.end(), x.begin());
                wx = wt;
            }
            if (std::abs(wx) <= kRetractionTol) return;
            throw NumericalError("project: retraction along grad w did not converge in 50 iterations");
        }
    }
}

double DomainSpec::margin(std::span<const double> x) const {
    switch (kind_) {
        case Kind::whole_space: return std::numeric_limits<double>::infinity();
        case Kind::open_set: return inside_(x) ? std::numeric_limits<double>::infinity() : 0.0;
        case Kind::polyhedron: {
            double m = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < normals_.size(); ++j) m = std::min(m, offsets_[j] - dot(normals_[j], x));
            return m;
        }
        case Kind::smooth: return w_(x);
    }
    return 0.0;
}

std::size_t DomainSpec::face_count() const {
    if (kind_ == Kind::polyhedron) return normals_.size();
    if (kind_ == Kind::smooth) return 1;
    return 0;
}

double DomainSpec::face_margin(std::size_t j, std::span<const double> x, std::span<double> normal) const {
    if (kind_ == Kind::polyhedron) {
        std::copy(normals_[j].begin(), normals_[j].end(), normal.begin());
        return offsets_[j] - dot(normals_[j], x);
    }
    if (kind_ == Kind::smooth) {
        grad_w_(x, normal);
        const double len = std::sqrt(dot(normal, normal));
        if (len > 0.0) {
            for (double& e : normal) e = -e / len;
        }
        return w_(x);
    }
    throw std::invalid_argument("face_margin: domain has no faces");
}

void check_unit_gradient(const DomainSpec& domain, std::span<const double> boundary_points, double tol) {
    if (domain.kind() != DomainSpec::Kind::smooth) return;
    const auto dim = static_cast<std::size_t>(domain.dim());
    if (boundary_points.size() % dim != 0) throw ConfigError("check_unit_gradient: point list is not a multiple of the dimension");
    std::vector<double> g(dim);
    for (std::size_t k = 0; k < boundary_points.size(); k += dim) {
        auto x = boundary_points.subspan(k, dim);
        domain.grad_w(x, g);
        const double len = std::sqrt(dot(g, g));
        if (std::abs(len - 1.0) > tol) {
            throw ConfigError("domain: |grad w| = " + std::to_string(len) + " on a boundary point, expected 1");
        }
    }
}

}  // namespace bsdelab
