#include "bsdelab/regression.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

#include "bsdelab/errors.hpp"
#include "bsdelab/parallel.hpp"

namespace bsdelab {

namespace {

// All multi-indices of total degree <= degree in dim variables, graded order.
std::vector<std::vector<int>> multi_indices(int dim, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    for (int total = 0; total <= degree; ++total) {
        std::function<void(int, int)> rec = [&](int pos, int left) {
            if (pos == dim - 1) {
                idx[static_cast<std::size_t>(pos)] = left;
                out.push_back(idx);
                return;
            }
            for (int k = left; k >= 0; --k) {
                idx[static_cast<std::size_t>(pos)] = k;
                rec(pos + 1, left - k);
            }
        };
        if (dim == 0) {
            if (total == 0) out.emplace_back();
        } else {
            rec(0, total);
        }
    }
    return out;
}

double hermite(int k, double x) {
    double h0 = 1.0;
    if (k == 0) return h0;
    double h1 = x;
    for (int j = 1; j < k; ++j) {
        const double h2 = x * h1 - j * h0;
        h0 = h1;
        h1 = h2;
    }
    return h1;
}

BasisFunctions product_basis(int dim, int degree, bool use_hermite) {
    auto indices = std::make_shared<std::vector<std::vector<int>>>(multi_indices(dim, degree));
    BasisFunctions b;
    b.size = indices->size();
    b.eval = [indices, degree, use_hermite](std::span<const double> u, std::span<double> out) {
        const std::size_t d = u.size();
        // table[c][k] = P_k(u_c)
        double table[8][5];
        for (std::size_t c = 0; c < d; ++c) {
            for (int k = 0; k <= degree; ++k) table[c][k] = use_hermite ? hermite(k, u[c]) : std::pow(u[c], k);
        }
        for (std::size_t j = 0; j < indices->size(); ++j) {
            double v = 1.0;
            for (std::size_t c = 0; c < d; ++c) v *= table[c][(*indices)[j][c]];
            out[j] = v;
        }
    };
    return b;
}

// Tensor products of hat functions on cells+1 equally spaced knots over
// [-4, 4] in standardised units; constant beyond the outer knots.
constexpr double kHatRange = 4.0;

BasisFunctions hat_basis(int dim, int cells) {
    std::size_t size = 1;
    for (int c = 0; c < dim; ++c) size *= static_cast<std::size_t>(cells + 1);
    if (size > 4096) throw ConfigError("hat basis: too many tensor functions for this dimension");
    BasisFunctions b;
    b.size = size;
    b.eval = [cells, size](std::span<const double> u, std::span<double> out) {
        std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(size), 0.0);
        const double h = 2.0 * kHatRange / cells;
        std::size_t base = 0, stride = 1;
        // each coordinate touches two knots, so at most 2^d nonzero entries
        std::size_t lo_idx[8];
        double w_hi[8];
        for (std::size_t c = 0; c < u.size(); ++c) {
            const double v = std::clamp((u[c] + kHatRange) / h, 0.0, static_cast<double>(cells));
            std::size_t j = std::min(static_cast<std::size_t>(v), static_cast<std::size_t>(cells - 1));
            lo_idx[c] = j;
            w_hi[c] = v - static_cast<double>(j);
            base += j * stride;
            stride *= static_cast<std::size_t>(cells + 1);
        }
        const std::size_t d = u.size();
        for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
            double w = 1.0;
            std::size_t idx = 0, st = 1;
            for (std::size_t c = 0; c < d; ++c) {
                const bool up = (corner >> c) & 1u;
                w *= up ? w_hi[c] : 1.0 - w_hi[c];
                idx += (lo_idx[c] + (up ? 1 : 0)) * st;
                st *= static_cast<std::size_t>(cells + 1);
            }
            out[idx] += w;
        }
        (void)base;
    };
    return b;
}

// Indicators of the cells between standard normal quantiles j / cells,
// tensorised over coordinates.
BasisFunctions cell_basis(int dim, int cells) {
    std::size_t size = 1;
    for (int c = 0; c < dim; ++c) size *= static_cast<std::size_t>(cells);
    if (size > 4096) throw ConfigError("cell basis: too many tensor functions for this dimension");
    auto edges = std::make_shared<std::vector<double>>();
    for (int j = 1; j < cells; ++j) {
        // inverse normal cdf by bisection; only evaluated once per basis
        const double target = static_cast<double>(j) / cells;
        double lo = -10.0, hi = 10.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (0.5 * std::erfc(-mid / std::sqrt(2.0)) < target ? lo : hi) = mid;
        }
        edges->push_back(0.5 * (lo + hi));
    }
    BasisFunctions b;
    b.size = size;
    b.eval = [edges, cells, size](std::span<const double> u, std::span<double> out) {
        std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(size), 0.0);
        std::size_t idx = 0, stride = 1;
        for (double v : u) {
            const auto j = static_cast<std::size_t>(std::upper_bound(edges->begin(), edges->end(), v) - edges->begin());
            idx += j * stride;
            stride *= static_cast<std::size_t>(cells);
        }
        out[idx] = 1.0;
    };
    return b;
}

struct Registry {
    std::mutex mutex;
    std::map<std::string, BasisFactory> factories;
    Registry() {
        factories["constant"] = [](int) {
            BasisFunctions b;
            b.size = 1;
            b.eval = [](std::span<const double>, std::span<double> out) { out[0] = 1.0; };
            return b;
        };
        for (int k = 1; k <= 4; ++k) {
            factories["hermite" + std::to_string(k)] = [k](int dim) { return product_basis(dim, k, true); };
            factories["monomial" + std::to_string(k)] = [k](int dim) { return product_basis(dim, k, false); };
        }
        for (int cells : {4, 8, 16, 32}) {
            factories["hat" + std::to_string(cells)] = [cells](int dim) { return hat_basis(dim, cells); };
            factories["cells" + std::to_string(cells)] = [cells](int dim) { return cell_basis(dim, cells); };
        }
    }
};

Registry& registry() {
    static Registry r;
    return r;
}

}  // namespace

void register_basis(const std::string& name, BasisFactory factory) {
    if (name.empty() || !factory) throw std::invalid_argument("register_basis: empty name or factory");
    auto& r = registry();
    std::lock_guard<std::mutex> lock(r.mutex);
    r.factories[name] = std::move(factory);
}

bool has_basis(const std::string& name) {
    auto& r = registry();
    std::lock_guard<std::mutex> lock(r.mutex);
    return r.factories.count(name) > 0;
}

std::vector<std::string> basis_names() {
    auto& r = registry();
    std::lock_guard<std::mutex> lock(r.mutex);
    std::vector<std::string> out;
    for (const auto& kv : r.factories) out.push_back(kv.first);
    return out;
}

BasisFunctions make_basis(const std::string& name, int dim) {
    if (dim < 0 || dim > 8) throw std::invalid_argument("make_basis: state dimension must be in [0, 8]");
    BasisFactory factory;
    {
        auto& r = registry();
        std::lock_guard<std::mutex> lock(r.mutex);
        auto it = r.factories.find(name);
        if (it == r.factories.end()) throw ConfigError("unknown regression basis '" + name + "'");
        factory = it->second;
    }
    BasisFunctions b = factory(dim);
    if (b.size == 0 || !b.eval) throw std::invalid_argument("make_basis: factory returned an empty basis");
    return b;
}

void Standardizer::apply(std::span<const double> x, std::span<double> out) const {
    for (std::size_t c = 0; c < active.size(); ++c) {
        out[c] = (x[static_cast<std::size_t>(active[c])] - mean[c]) / scale[c];
    }
}

void LinearFit::basis_values(std::span<const double> x, std::span<double> phi) const {
    double u[8];
    standardizer_.apply(x, std::span<double>(u, standardizer_.active.size()));
    const std::span<const double> us(u, standardizer_.active.size());
    basis_.eval(us, phi.subspan(0, basis_.size));
    if (split_) extra_basis_.eval(us, phi.subspan(basis_.size, extra_basis_.size));
}

double LinearFit::combine(std::span<const double> phi, int block, int response) const {
    const std::size_t p0 = basis_.size;
    const std::size_t p = block == 0 ? p0 : extra_size();
    const std::size_t off = block == 0 ? 0 : p0 + static_cast<std::size_t>(block - 1) * p;
    const std::size_t at = block == 0 || !split_ ? 0 : p0;
    double s = 0.0;
    for (std::size_t j = 0; j < p; ++j) s += coef_(static_cast<Eigen::Index>(off + j), response) * phi[at + j];
    return s;
}

LinearFit fit_regression(const RegressionProblem& pr) {
    if (pr.state_dim < 0 || pr.state_dim > 8) throw std::invalid_argument("fit_regression: state dimension must be in [0, 8]");
    if (pr.extra_dim < 0 || pr.response_dim < 1) throw std::invalid_argument("fit_regression: bad extra/response dimension");
    if (!pr.state && pr.state_dim > 0) throw std::invalid_argument("fit_regression: missing state accessor");
    if (!pr.response) throw std::invalid_argument("fit_regression: missing response accessor");
    if (pr.extra_dim > 0 && !pr.extras) throw std::invalid_argument("fit_regression: missing extras accessor");
    if (pr.rows == 0) throw NumericalError("fit_regression: no rows");

    const std::size_t sd = static_cast<std::size_t>(pr.state_dim);
    const std::size_t chunks = chunk_count(pr.rows, kDefaultChunk);

    // Pass 1: per-coordinate sums and sums of squared deviations from the first row
    // (shifted accumulation keeps the variance accurate for large means).
    std::vector<double> shift(sd, 0.0);
    if (sd > 0) pr.state(0, shift);
    std::vector<double> s1(chunks * sd, 0.0), s2(chunks * sd, 0.0);
    parallel_for_chunks(pr.rows, kDefaultChunk, pr.threads, [&](std::size_t b, std::size_t e, std::size_t c) {
        std::vector<double> x(sd);
        for (std::size_t r = b; r < e; ++r) {
            if (sd > 0) pr.state(r, x);
            for (std::size_t j = 0; j < sd; ++j) {
                const double d = x[j] - shift[j];
                s1[c * sd + j] += d;
                s2[c * sd + j] += d * d;
            }
        }
    });
    LinearFit fit;
    fit.state_dim_ = pr.state_dim;
    fit.extra_dim_ = pr.extra_dim;
    const double n = static_cast<double>(pr.rows);
    for (std::size_t j = 0; j < sd; ++j) {
        double a = 0.0, q = 0.0;
        for (std::size_t c = 0; c < chunks; ++c) {
            a += s1[c * sd + j];
            q += s2[c * sd + j];
        }
        const double mean_shifted = a / n;
        const double var = std::max(0.0, q / n - mean_shifted * mean_shifted);
        const double mean = shift[j] + mean_shifted;
        const double sdev = std::sqrt(var);
        if (sdev > 1e-12 * (1.0 + std::abs(mean))) {
            fit.standardizer_.active.push_back(static_cast<int>(j));
            fit.standardizer_.mean.push_back(mean);
            fit.standardizer_.scale.push_back(sdev);
        }
    }
    const int active_dim = static_cast<int>(fit.standardizer_.active.size());
    fit.basis_ = make_basis(pr.basis, active_dim);
    if (!pr.extra_basis.empty() && pr.extra_basis != pr.basis && pr.extra_dim > 0) {
        fit.extra_basis_ = make_basis(pr.extra_basis, active_dim);
        fit.split_ = true;
    }

    const std::size_t p0 = fit.basis_.size;
    const std::size_t p1 = fit.extra_size();
    const std::size_t p = fit.basis_size();
    const std::size_t at = fit.split_ ? p0 : 0;
    const std::size_t k = p0 + p1 * static_cast<std::size_t>(pr.extra_dim);
    const std::size_t rd = static_cast<std::size_t>(pr.response_dim);
    if (pr.rows < k) {
        throw NumericalError("fit_regression: rank-deficient regression (" + std::to_string(pr.rows) +
                             " rows for " + std::to_string(k) + " features)");
    }

    // Pass 2: chunked normal equations.
    std::vector<Eigen::MatrixXd> gram(chunks), rhs(chunks);
    parallel_for_chunks(pr.rows, kDefaultChunk, pr.threads, [&](std::size_t b, std::size_t e, std::size_t c) {
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
        Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(rd));
        std::vector<double> x(sd), phi(p), ex(static_cast<std::size_t>(pr.extra_dim)), y(rd);
        Eigen::VectorXd f(static_cast<Eigen::Index>(k));
        for (std::size_t r = b; r < e; ++r) {
            if (sd > 0) pr.state(r, x);
            fit.basis_values(x, phi);
            if (pr.extra_dim > 0) pr.extras(r, ex);
            pr.response(r, y);
            for (std::size_t j = 0; j < p0; ++j) f[static_cast<Eigen::Index>(j)] = phi[j];
            for (std::size_t bl = 0; bl < ex.size(); ++bl) {
                for (std::size_t j = 0; j < p1; ++j) f[static_cast<Eigen::Index>(p0 + bl * p1 + j)] = phi[at + j] * ex[bl];
            }
            G.selfadjointView<Eigen::Lower>().rankUpdate(f);
            for (std::size_t q = 0; q < rd; ++q) R.col(static_cast<Eigen::Index>(q)) += f * y[q];
        }
        gram[c] = G.selfadjointView<Eigen::Lower>();
        rhs[c] = R;
    });
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(rd));
    for (std::size_t c = 0; c < chunks; ++c) {
        G += gram[c];
        R += rhs[c];
    }
    if (!G.allFinite() || !R.allFinite()) throw NumericalError("fit_regression: non-finite design or response");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(G);
    qr.setThreshold(1e-11);
    if (qr.rank() < static_cast<Eigen::Index>(k)) {
        throw NumericalError("fit_regression: rank-deficient regression (rank " + std::to_string(qr.rank()) + " of " +
                             std::to_string(k) + ")");
    }
    fit.coef_ = qr.solve(R);
    if (!fit.coef_.allFinite()) throw NumericalError("fit_regression: non-finite coefficients");
    return fit;
}

}  // namespace bsdelab
