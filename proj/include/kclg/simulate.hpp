#pragma once

#include "kclg/lattice.hpp"
#include "kclg/models.hpp"
#include "kclg/selfdiff.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kclg {

// Prefix sums over nonnegative rates with O(log n) update and sampling.
class FenwickTree {
public:
    explicit FenwickTree(std::size_t n = 0);
    std::size_t size() const { return value_.size(); }
    void set(std::size_t i, double v);
    double get(std::size_t i) const { return value_[i]; }
    double total() const { return total_; }
    // Smallest i with prefix(i + 1) > u, for u in [0, total).
    std::size_t find(double u) const;
    // Recomputes the internal sums from the stored values.
    void rebuild();

private:
    std::vector<double> value_, tree_;
    double total_ = 0.0;
    std::size_t top_ = 1;
};

struct Event {
    enum class Kind { Exchange, Flip };
    Kind kind = Kind::Exchange;
    int index = -1;  // edge index or site index
    double rate = 0.0;
};

// Exchange dynamics on the configuration's domain. With a reservoir density
// parameter q, every boundary site also flips (rate q when occupied, 1-q when
// empty); the domain then reads its boundary fill outside the box.
class Simulator {
public:
    Simulator(ConstraintModel m, Configuration init, std::uint64_t seed, std::optional<double> reservoirQ = {},
              std::uint64_t stream = 0);

    // nullopt when the total rate is zero (the clock does not move).
    std::optional<Event> step();
    // Advances to time t (events with clock <= t); false if blocked on the way.
    bool advanceTo(double t);

    double time() const { return time_; }
    std::uint64_t events() const { return events_; }
    const Configuration& config() const { return config_; }
    const ConstraintModel& model() const { return model_; }
    const EdgeTable& edges() const { return table_; }
    double totalRate() const { return tree_.total(); }
    bool blocked() const { return active_ == 0; }
    std::uint64_t seed() const { return seed_; }
    std::vector<Event> activeEvents() const;

    // Follow the particle at a site index; displacement() is unwrapped.
    void tagTracer(int site);
    int tracer() const { return tracer_; }
    const Site& displacement() const { return disp_; }

    // Full rebuild after every event, compared with the incremental rates.
    void setDebugCheck(bool on) { debug_ = on; }
    // Largest |incremental - rebuilt| over all events right now.
    double rebuildDiscrepancy() const;

private:
    std::optional<Event> stepUntil(double limit);
    double eventRate(std::size_t k) const;
    void setRate(std::size_t k, double v);
    void refresh(int site);
    void rebuildAll();

    ConstraintModel model_;
    Configuration config_;
    EdgeTable table_;
    std::optional<double> q_;
    std::vector<int> flipSites_;
    std::vector<int> flipIndex_;  // site -> flip event index or -1
    FenwickTree tree_;
    std::size_t active_ = 0;
    Rng rng_;
    std::uint64_t seed_;
    double time_ = 0.0;
    std::uint64_t events_ = 0, sinceRebuild_ = 0;
    int tracer_ = -1;
    Site disp_;
    bool debug_ = false;
};

struct Observable {
    std::string id;
    std::function<double(const Configuration&)> fn;
};
Observable densityObservable();
Observable siteObservable(int siteIndex);

struct TimeSeries {
    std::string id;
    std::vector<double> times, values;
    std::uint64_t seed = 0;
    std::string modelHash;
    bool truncated = false;  // the run blocked before the last scheduled time
    double blockedAt = -1.0;
};

struct RunOptions {
    // Keep recording the frozen state after a block instead of truncating.
    bool freezeWhenBlocked = false;
};

// Records each observable at the scheduled times (strictly increasing, >= 0).
std::vector<TimeSeries> run(Simulator& s, const std::vector<double>& schedule, const std::vector<Observable>& obs,
                            const RunOptions& opt = {});
std::vector<double> uniformSchedule(double dt, int n);

// Tracer runs on a torus of side L. Kc dynamics moves the tagged particle with
// the exchange process; Aux dynamics applies the permutation family around it.
struct TracerOptions {
    int L = 16;
    double q = 0.5;
    std::vector<double> schedule;
    std::vector<double> u;
    int replicas = 100;
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

struct TracerSeries {
    std::vector<double> times;
    std::vector<double> msdU, msdUErr;      // mean (u.z_t)^2 and its standard error
    std::vector<double> msdNorm, msdNormErr;  // mean |z_t|^2
    std::vector<double> meanU;              // mean u.z_t
    int replicas = 0;
    int frozenReplicas = 0;  // replicas whose tracer never moved
    // msdU / (2t) at the last time, with its standard error.
    double dEstimate() const;
    double dStderr() const;
};

TracerSeries tracerRun(const PermutationDynamics& dyn, const TracerOptions& opt);

// One replica of the auxiliary permutation process on the torus, for tests.
class PermutationTracer {
public:
    PermutationTracer(const PermutationDynamics& dyn, Configuration torus, int tracerSite, std::uint64_t seed,
                      std::uint64_t stream = 0);
    std::optional<int> step();  // index into the generator family, nullopt when frozen
    bool advanceTo(double t);
    bool frozen() const;
    double time() const { return time_; }
    const Site& displacement() const { return disp_; }
    const Configuration& config() const { return config_; }
    int tracer() const { return tracer_; }

private:
    std::optional<int> stepUntil(double limit);
    double rates(std::vector<double>& out) const;

    const PermutationDynamics* dyn_;
    std::vector<TracerGenerator> family_;
    Configuration config_;
    int tracer_;
    Site disp_;
    Rng rng_;
    double time_ = 0.0;
};

struct AutocorrResult {
    std::vector<double> lags, corr;
    double tau = 0.0, tauLo = 0.0, tauHi = 0.0;
    double rate = 0.0;  // 1 / tau
    int pointsUsed = 0;
    bool degenerate = false;  // constant observable
    bool wide = false;        // too few usable lags for a tight band
    std::string warning;
};

// Empirical autocorrelation of equally spaced samples (one or more stationary
// series) and a least-squares fit of exp(-lag/tau) over the lags above noise.
AutocorrResult autocorrelation(const std::vector<std::vector<double>>& series, double dt, int maxLag = 0);

struct ChiSquareResult {
    double statistic = 0.0;
    int dof = 0;
    double pValue = 0.0;
    std::uint64_t transitions = 0;
};

// Runs the exchange process on a torus sector, tallies jumps and tests the
// jump-chain frequencies against rows of the exact generator.
ChiSquareResult transitionChiSquare(const ConstraintModel& m, int L, int k, std::uint64_t nEvents, std::uint64_t seed);

std::string timeSeriesCsv(const std::vector<TimeSeries>& series, const std::string& header);

} // namespace kclg
