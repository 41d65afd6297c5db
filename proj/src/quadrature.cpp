#include "bsdelab/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bsdelab/errors.hpp"

namespace bsdelab {

namespace {

double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                    double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth) {
    if (a == b) return 0.0;
    if (a > b) return -adaptive_simpson(f, b, a, tol, max_depth);
    // Split once up front so that integrands vanishing at the three Simpson
    // nodes of [a, b] are not mistaken for zero.
    constexpr int kInitialPanels = 8;
    const double h = (b - a) / kInitialPanels;
    double total = 0.0;
    for (int k = 0; k < kInitialPanels; ++k) {
        const double lo = a + k * h;
        const double hi = (k + 1 == kInitialPanels) ? b : lo + h;
        const double flo = f(lo);
        const double fhi = f(hi);
        const double fmid = f(0.5 * (lo + hi));
        const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
        total += simpson_step(f, lo, hi, flo, fmid, fhi, whole, tol / kInitialPanels, max_depth);
    }
    if (!std::isfinite(total)) throw NumericalError("adaptive_simpson: non-finite integral");
    return total;
}

GaussLegendreRule gauss_legendre(int order) {
    if (order < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
    GaussLegendreRule rule;
    rule.nodes.resize(order);
    rule.weights.resize(order);
    for (int i = 0; i < order; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= order; ++k) {
                const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = pk;
            }
            if (order == 1) {
                p1 = x;
                p0 = 1.0;
            }
            dp = order * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        rule.nodes[i] = x;
        rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return rule;
}

}  // namespace bsdelab
