#pragma once

#include "kclg/error.hpp"
#include "kclg/lattice.hpp"
#include "kclg/transport.hpp"
#include "kclg/util.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace kclg::detail {

// Calls fn(mask, weight) over the product measure on nSites sites (bit = occupied,
// P(empty) = q) with the bits in `fixedOccupied` forced to 1; weights sum to 1.
template <class Fn>
void forEachState(std::size_t nSites, double q, const Estimator& est, std::uint64_t fixedOccupied, Fn&& fn) {
    if (nSites > 64) throw BudgetError("dependency window too large");
    const std::uint64_t all = nSites == 64 ? ~0ULL : (1ULL << nSites) - 1;
    const std::uint64_t free = all & ~fixedOccupied;
    const int nFree = std::popcount(free);
    if (est.kind == Estimator::Kind::Exact) {
        const std::uint64_t budget = est.budget ? est.budget : defaultBudget();
        if (nFree > 40 || (1ULL << nFree) > budget)
            throw BudgetError("dependency window of " + std::to_string(nFree) + " free sites exceeds the budget");
        std::uint64_t s = 0;
        do {
            const int occ = std::popcount(s);
            fn(s | fixedOccupied, std::pow(1.0 - q, occ) * std::pow(q, nFree - occ));
            s = (s - free) & free;
        } while (s != 0);
    } else {
        if (est.samples == 0) throw ArgumentError("Monte Carlo needs at least one sample");
        Rng rng = makeRng(est.seed, 0x7a11);
        const double w = 1.0 / static_cast<double>(est.samples);
        for (std::uint64_t k = 0; k < est.samples; ++k) {
            std::uint64_t s = fixedOccupied;
            for (std::size_t i = 0; i < nSites; ++i)
                if ((free >> i & 1U) && uniform01(rng) >= q) s |= 1ULL << i;
            fn(s, w);
        }
    }
}

inline std::uint32_t pattern(const std::vector<int>& idx, std::uint64_t s) {
    std::uint32_t p = 0;
    for (std::size_t j = 0; j < idx.size(); ++j) p |= static_cast<std::uint32_t>((s >> idx[j]) & 1U) << j;
    return p;
}

// Dense quadratic-form accumulator in the configuration-indicator basis of a
// window of n sites; finish() converts to the occupation-product basis.
class IndicatorForm {
public:
    explicit IndicatorForm(int n);
    // Adds weight * (lin + sum_k g_k F(p_k))^2 for a sparse gradient {(p_k, g_k)}.
    void add(double weight, double lin, std::vector<std::pair<std::uint32_t, double>>& grad);
    VariationalProblem finish(const std::vector<Site>& window) const;

private:
    int n_;
    Eigen::MatrixXd A_;
    Eigen::VectorXd b_;
    double c0_ = 0.0;
};

} // namespace kclg::detail
