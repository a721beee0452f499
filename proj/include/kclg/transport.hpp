#pragma once

#include "kclg/lattice.hpp"
#include "kclg/models.hpp"
#include "kclg/moves.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace kclg {

// The rate of an axis as a signed sum of "all of S empty" indicators; nullopt for custom rates.
struct RateTerm {
    double coef;
    std::vector<Site> empty;
};
std::optional<std::vector<RateTerm>> rateTerms(const ConstraintModel& m, int axis);

// Per-axis offset sets A^alpha (ordered on construction by decreasing alpha-coordinate).
struct AuxSpec {
    int dim = 1;
    std::vector<std::vector<Site>> sets;

    static AuxSpec make(int dim, std::vector<std::vector<Site>> sets);
    // A^alpha = C u (l e_alpha + C) for every axis.
    static AuxSpec fromCertificate(const MobileClusterCertificate& cert);
    // A_i^alpha, i = 0..n_alpha.
    std::vector<Site> chain(int axis, int i) const;
    int n(int axis) const { return static_cast<int>(sets.at(axis).size()); }
    int maxN() const;
};

// Weighted-count model: one unit clause per forward transition i = 0..n-1.
ConstraintModel buildAuxModel(const AuxSpec& spec, const std::string& name = "aux");

// Sum over torus edges of c_{x,y} (x - y)(eta(x) - eta(y)), per axis.
std::vector<double> totalCurrent(const Configuration& c, const ConstraintModel& aux);

struct Estimator {
    enum class Kind { Exact, MonteCarlo };
    Kind kind = Kind::Exact;
    std::uint64_t samples = 100000;
    std::uint64_t seed = 1;
    std::uint64_t budget = 0;  // exact mode: max 2^|W|; 0 = defaultBudget()

    static Estimator exact() { return {}; }
    static Estimator monteCarlo(std::uint64_t samples, std::uint64_t seed) {
        return {Kind::MonteCarlo, samples, seed, 0};
    }
    std::string str() const;
};

// Quadratic form f^T A f + 2 b^T f + c0 for the expectation in the diffusion
// variational formula; f is expanded in the occupation products
// prod_{s in S} eta(s) over nonempty S subset of the window.
struct VariationalProblem {
    std::vector<Site> window;
    std::vector<std::uint32_t> basis;  // subset masks over window indices
    Eigen::MatrixXd A;
    Eigen::VectorXd b;
    double c0 = 0.0;
    double prefactor = 0.0;  // 1/(2q(1-q))
    Estimator estimator;
    std::size_t dependencySites = 0;

    double value(const Eigen::VectorXd& f) const;
    // Same problem with basis entries permuted (perm[k] = old index of new entry k).
    VariationalProblem permuted(const std::vector<int>& perm) const;
};

VariationalProblem assembleDiffusionQP(const ConstraintModel& m, const std::vector<double>& u,
                                       const std::vector<Site>& window, double q,
                                       const Estimator& est = Estimator::exact());

struct QPSolution {
    Eigen::VectorXd coefficients;
    double value = 0.0;     // minimum of the expectation
    double D = 0.0;         // prefactor * value
    double residual = 0.0;  // |A f + b|
    int rank = 0;
};

QPSolution solveQP(const VariationalProblem& vp, double tol = 1e-10);

// u.D^(window).u
double diffusionWindow(const ConstraintModel& m, const std::vector<double>& u, const std::vector<Site>& window,
                       double q, const Estimator& est = Estimator::exact());

// mu[c_{0,e_alpha}] by exact enumeration of the clause support.
double meanRate(const ConstraintModel& m, int axis, double q);
// sum_alpha (u.e_alpha)^2 mu[c_{0,e_alpha}]
double auxDiffusionClosedForm(const ConstraintModel& aux, double q, const std::vector<double>& u);

// Direct evaluation of the expectation for f given on the product basis.
struct ExpectationEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};
ExpectationEstimate evaluateExpectation(const ConstraintModel& m, const std::vector<double>& u,
                                        const std::vector<Site>& window, double q,
                                        const std::vector<std::uint32_t>& basis, const Eigen::VectorXd& f,
                                        const Estimator& est = Estimator::exact());

// d T^2 2^Loss cMax^aux |footprint|, maximized over the axis reports.
double comparisonConstant(const std::vector<MoveReport>& auxMoves, int dim, double cMaxAux);

} // namespace kclg
