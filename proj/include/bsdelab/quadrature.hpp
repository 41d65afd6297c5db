#pragma once

#include <functional>
#include <vector>

namespace bsdelab {

/// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance tol.
/// Returns 0 when a == b and the negated integral when a > b.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-10, int max_depth = 48);

struct GaussLegendreRule {
    std::vector<double> nodes;    // on [-1, 1]
    std::vector<double> weights;
};

/// Gauss–Legendre rule with `order` nodes, computed by Newton iteration on P_order.
GaussLegendreRule gauss_legendre(int order);

}  // namespace bsdelab
