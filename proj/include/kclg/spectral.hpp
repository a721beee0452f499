#pragma once

#include "kclg/lattice.hpp"
#include "kclg/models.hpp"

#include <Eigen/Sparse>

#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

namespace kclg {

// Bit i of a mask is the occupancy of site index i.
std::uint64_t toMask(const Configuration& c);
Configuration fromMask(const Domain& d, std::uint64_t mask);

class StateSpace {
public:
    enum class Kind { Full, Sector, Subset };

    static StateSpace full(const Domain& d, std::uint64_t budget = 0);
    // Fixed number of vacancies, colexicographic in the vacancy positions.
    static StateSpace sector(const Domain& d, int vacancies, std::uint64_t budget = 0);
    static StateSpace subset(const Domain& d, std::vector<std::uint64_t> states);

    Kind kind() const { return kind_; }
    const Domain& domain() const { return dom_; }
    std::size_t size() const { return states_.size(); }
    std::uint64_t state(std::size_t i) const { return states_[i]; }
    const std::vector<std::uint64_t>& states() const { return states_; }
    // -1 when the mask is not in the space.
    long indexOf(std::uint64_t mask) const;
    Configuration configuration(std::size_t i) const { return fromMask(dom_, states_[i]); }

private:
    Kind kind_ = Kind::Full;
    Domain dom_;
    int vacancies_ = 0;
    std::vector<std::uint64_t> states_;
    std::unordered_map<std::uint64_t, long> index_;
};

struct RateMatrix {
    StateSpace space;
    Eigen::SparseMatrix<double, Eigen::RowMajor> Q;  // diagonal = -row sum
    std::vector<double> weight;                      // normalized stationary weights

    // Largest |w_i Q_ij - w_j Q_ji| relative to max(w_i Q_ij).
    double detailedBalanceError() const;
    double maxRowSum() const;
    // "i j value" lines for every nonzero entry.
    std::string tripletDump() const;
};

RateMatrix buildReservoirGenerator(const ConstraintModel& m, int L, double q, std::uint64_t budget = 0);
RateMatrix buildClosedGenerator(const ConstraintModel& m, int L, int k, Boundary b, std::uint64_t budget = 0);
RateMatrix buildTorusGenerator(const ConstraintModel& m, int L, int k, std::uint64_t budget = 0);
// Exchange dynamics on an arbitrary state set closed under the dynamics.
RateMatrix buildExchangeGenerator(const ConstraintModel& m, StateSpace space);
RateMatrix restrictTo(const RateMatrix& q, const std::vector<std::size_t>& states);

// Component label per state (graph of positive rates).
std::vector<int> componentLabels(const RateMatrix& q, int* count = nullptr);

struct RelaxationResult {
    double gap = 0.0;
    double tau = std::numeric_limits<double>::infinity();
    int components = 1;
    std::string method;
    bool finite() const { return gap > 0.0; }
};

struct SpectralOptions {
    std::size_t denseLimit = 1024;
    double tolerance = 1e-10;
    std::uint64_t seed = 7;
};

RelaxationResult relaxationTime(const RateMatrix& q, const SpectralOptions& opt = {});
// Restricted to one component (label from componentLabels).
RelaxationResult relaxationTime(const RateMatrix& q, int component, const SpectralOptions& opt = {});

struct ErgodicReport {
    std::vector<int> labels;
    std::vector<std::size_t> sizes;
    std::vector<bool> hasCluster;  // per component
    std::size_t ergodicStates = 0;
    std::size_t mismatches = 0;    // states where the static rule disagrees with the dynamics
    bool staticMatch = true;
    std::string exampleMismatch;
};

// Static rule: some translate x + C_i lies in the box and is empty.
bool containsEmptyTranslate(const Configuration& c, const std::vector<std::vector<Site>>& clusters);
ErgodicReport ergodicComponents(const ConstraintModel& m, int L, int k, const std::vector<std::vector<Site>>& clusters,
                                Boundary b = Boundary::Occupied, std::uint64_t budget = 0);
ErgodicReport ergodicComponents(const RateMatrix& q, const std::vector<std::vector<Site>>& clusters);

bool isBlocked(const Configuration& c, const ConstraintModel& m);
double totalExchangeRate(const Configuration& c, const ConstraintModel& m);

struct BoxCensus {
    int boxes = 0;
    int pregood = 0;
    int good = 0;
};

BoxCensus boxCensus(const Configuration& c, const std::vector<std::vector<Site>>& clusters, int lambda);

} // namespace kclg
