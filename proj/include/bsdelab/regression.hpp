#pragma once

// Cross-path least-squares regression for conditional expectations.
//
// State coordinates are standardised per fit (coordinates with zero spread
// are dropped, so a deterministic state reduces the fit to sample means).
// Features are basis(standardised state) times (1, extra_1, ..., extra_e).
// Normal equations are accumulated over fixed chunks of rows and combined
// in chunk order, so coefficients do not depend on the thread count.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bsdelab {

struct BasisFunctions {
    std::size_t size = 1;
    std::function<void(std::span<const double> u, std::span<double> out)> eval;
};

using BasisFactory = std::function<BasisFunctions(int dim)>;

/// Named bases. Built in: "constant", "hermite1".."hermite4" (products of
/// probabilists' Hermite polynomials of total degree <= k) and
/// "monomial1".."monomial4".
void register_basis(const std::string& name, BasisFactory factory);
bool has_basis(const std::string& name);
std::vector<std::string> basis_names();
BasisFunctions make_basis(const std::string& name, int dim);

inline const std::string kDefaultBasis = "hermite3";

struct Standardizer {
    std::vector<int> active;      ///< retained coordinates
    std::vector<double> mean;     ///< per retained coordinate
    std::vector<double> scale;    ///< per retained coordinate
    void apply(std::span<const double> x, std::span<double> out) const;
};

/// Row accessors: state(r, out) writes the state of row r; extras(r, out)
/// writes the extra multipliers; response(r, out) writes the responses.
using RowFn = std::function<void(std::size_t row, std::span<double> out)>;

struct RegressionProblem {
    std::size_t rows = 0;
    int state_dim = 1;
    RowFn state;
    int extra_dim = 0;
    RowFn extras;           ///< may be empty when extra_dim == 0
    int response_dim = 1;
    RowFn response;
    std::string basis = kDefaultBasis;
    std::string extra_basis;  ///< basis multiplying the extras; empty means `basis`
    int threads = 1;
};

class LinearFit {
public:
    /// Basis values at a state (size basis_size()): the main basis followed
    /// by the extras basis when the two differ.
    void basis_values(std::span<const double> x, std::span<double> phi) const;
    /// Fitted function of block 0 (the plain part) or of the multiplier of extra block - 1.
    double combine(std::span<const double> phi, int block, int response) const;

    std::size_t basis_size() const { return basis_.size + (split_ ? extra_basis_.size : 0); }
    std::size_t extra_size() const { return split_ ? extra_basis_.size : basis_.size; }
    int extra_dim() const { return extra_dim_; }
    const Eigen::MatrixXd& coefficients() const { return coef_; }
    const Standardizer& standardizer() const { return standardizer_; }

private:
    friend LinearFit fit_regression(const RegressionProblem& problem);
    BasisFunctions basis_;
    BasisFunctions extra_basis_;
    bool split_ = false;
    Standardizer standardizer_;
    Eigen::MatrixXd coef_;
    int extra_dim_ = 0;
    int state_dim_ = 1;
};

/// Least-squares fit. Throws NumericalError when the design is rank
/// deficient (including rows < number of features).
LinearFit fit_regression(const RegressionProblem& problem);

}  // namespace bsdelab
