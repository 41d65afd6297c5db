#pragma once

// Spatial domains for exit times and reflection.

#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsdelab/bounds.hpp"

namespace bsdelab {

using PointTest = std::function<bool(std::span<const double>)>;
using ScalarField = std::function<double(std::span<const double>)>;
using VectorField = std::function<void(std::span<const double>, std::span<double>)>;

class DomainSpec {
public:
    enum class Kind { whole_space, open_set, polyhedron, smooth };

    static DomainSpec whole_space(int dim);
    /// An open set known only through a membership test.
    static DomainSpec open_set(int dim, PointTest inside);
    /// {x : a_j . x < c_j for all j}; every a_j must have unit length.
    static DomainSpec polyhedron(std::vector<std::vector<double>> normals, std::vector<double> offsets);
    static DomainSpec interval(double c, double d);
    static DomainSpec box(std::vector<double> lo, std::vector<double> hi);
    /// {x : w(x) > 0} with |grad w| = 1 on the boundary.
    static DomainSpec smooth(int dim, ScalarField w, VectorField grad_w);
    /// Open ball, w(x) = (r^2 - |x - center|^2) / (2r).
    static DomainSpec ball(std::vector<double> center, double radius);

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    bool is_box() const { return box_; }
    bool bounded_faces() const { return kind_ == Kind::polyhedron; }

    bool contains(std::span<const double> x) const;                            ///< open domain
    bool contains_closed(std::span<const double> x, double tol = 1e-12) const; ///< closure

    /// Nearest point of the closure (exact for polyhedra, damped retraction
    /// along grad w for smooth domains). Throws NumericalError when the
    /// retraction does not converge.
    void project(std::span<double> x) const;

    /// Signed distance-like margin, positive inside: min_j (c_j - a_j.x) for
    /// polyhedra, w(x) for smooth domains, +inf for the whole space.
    double margin(std::span<const double> x) const;

    /// Number of faces used by the Brownian-bridge correction.
    std::size_t face_count() const;
    /// Margin to face j and its unit outward normal at x.
    double face_margin(std::size_t j, std::span<const double> x, std::span<double> normal) const;

    const std::vector<std::vector<double>>& normals() const { return normals_; }
    const std::vector<double>& offsets() const { return offsets_; }
    double w(std::span<const double> x) const { return w_(x); }
    void grad_w(std::span<const double> x, std::span<double> out) const { grad_w_(x, out); }

    DomainMetadata metadata;

private:
    Kind kind_ = Kind::whole_space;
    int dim_ = 1;
    bool box_ = false;
    std::vector<double> lo_, hi_;
    std::vector<std::vector<double>> normals_;
    std::vector<double> offsets_;
    PointTest inside_;
    ScalarField w_;
    VectorField grad_w_;
};

/// Throws ConfigError when |grad w| deviates from 1 by more than tol at any
/// of the supplied boundary points (flattened, dim per point).
void check_unit_gradient(const DomainSpec& domain, std::span<const double> boundary_points, double tol = 1e-6);

}  // namespace bsdelab
