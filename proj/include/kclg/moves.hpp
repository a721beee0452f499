#pragma once

#include "kclg/lattice.hpp"
#include "kclg/models.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kclg {

struct MoveStep {
    enum class Kind { Exchange, BoundaryFlip };
    Kind kind = Kind::Exchange;
    Site x;
    Direction e;

    static MoveStep exchange(const Site& x, Direction e) { return {Kind::Exchange, x, e}; }
    static MoveStep boundaryFlip(const Site& x) { return {Kind::BoundaryFlip, x, {}}; }
    Site other() const { return x + e.unit(x.dim); }
    MoveStep translated(const Site& z) const { return {kind, x + z, e}; }
    bool operator==(const MoveStep& o) const;
    std::string str() const;
};

struct Guard {
    std::vector<Site> empty, occupied;
    bool trivial() const { return empty.empty() && occupied.empty(); }
};

struct Branch {
    Guard guard;
    std::vector<MoveStep> steps;
};

// Site outside the reservoir box whose initial value is fixed by the move.
struct Ghost {
    enum class Init { Empty, Occupied, ComplementOf };
    Site site;
    Init init = Init::Occupied;
    Site ref;
};

// Dom = {eta : domain guard holds and some branch guard holds}; the first
// matching branch runs.
struct MoveProgram {
    std::string name;
    int dim = 1;
    Box window;
    std::vector<Site> extraSites;
    Guard domain;
    std::vector<Branch> branches;
    std::vector<Ghost> ghosts;

    static MoveProgram identity(int dim);
    static MoveProgram fromSteps(std::string name, int dim, std::vector<MoveStep> steps, Guard domain);

    bool deterministic() const { return branches.size() == 1 && branches[0].guard.trivial(); }
    std::size_t maxSteps() const;
    const std::vector<MoveStep>& steps() const { return branches.at(0).steps; }
    MoveProgram translated(const Site& z) const;
    // Product of the branch's transpositions, last step leftmost.
    FinitePermutation permutation(std::size_t branch = 0) const;
    std::set<Site> touchedSites() const;
    // Fits the window to the touched sites and domain.
    void fitWindow();
};

enum class Fill { Occupied, Empty };
// Sampled draws random configurations of the free window sites.
enum class ValidationMode { Exhaustive, WorstCase, Sampled };

struct MoveContext {
    const ConstraintModel* model = nullptr;
    Box window;
    Fill exteriorFill = Fill::Occupied;
    bool reservoir = false;
    // Tagged particle to track (must be required occupied by the domain).
    std::optional<Site> tracer;
    // Called with (initial, final) box configurations in reservoir mode.
    std::function<bool(const Configuration&, const Configuration&)> finalCheck;
    std::uint64_t budget = 0;  // 0 = defaultBudget()
    std::uint64_t samples = 1000;
    std::uint64_t seed = 1;
};

struct MoveReport {
    bool valid = true;
    ValidationMode mode = ValidationMode::WorstCase;
    std::size_t T = 0;
    double loss = 0.0;
    std::uint64_t maxCollisions = 1;
    int energyBarrier = 0;
    std::vector<FinitePermutation> permutations;
    int touchMax = 0;
    std::vector<Site> footprint;
    std::uint64_t configsChecked = 0;
    std::string witness;
    int witnessStep = -1;
    bool permutationConsistent = true;
    // steps whose two endpoints were both occupied (no vacancy moved)
    std::uint64_t occupiedPairSteps = 0;
    // reservoir mode
    bool extendedValid = true;
    std::uint64_t finalCheckFailures = 0;
    // tracer tracking
    bool tracerChecked = false;
    bool tracerOk = true;
    std::vector<Site> tracerDisplacements;

    std::string toJson() const;
};

MoveReport validate(const MoveProgram& p, const MoveContext& ctx, ValidationMode mode);

MoveProgram compose(const MoveProgram& m1, const MoveProgram& m2, std::optional<Box> bound = std::nullopt);
MoveProgram inverse(const MoveProgram& m);

struct MobileClusterCertificate {
    std::string modelName, modelHash;
    int dim = 1;
    std::vector<Site> cluster;
    int l = 0;
    // Indexed by Direction::index(): +e1,-e1,+e2,-e2,...
    std::vector<MoveProgram> tr, ex;
    std::vector<MoveReport> trReports, exReports;
    std::vector<bool> trPointwise;

    const MoveProgram& translation(Direction e) const { return tr.at(e.index()); }
    const MoveProgram& exchange(Direction e) const { return ex.at(e.index()); }
};

MoveProgram translationMove(const MobileClusterCertificate& cert, const Site& x, Direction e);
MoveProgram exchangeMove(const MobileClusterCertificate& cert, const Site& x, Direction e);

struct SearchResult {
    enum class Status { Found, NotFound, BudgetExceeded };
    Status status = Status::NotFound;
    std::optional<MoveProgram> program;
    std::uint64_t explored = 0;
};

SearchResult searchTranslation(const ConstraintModel& m, const std::vector<Site>& C, int l, Direction e,
                               std::uint64_t budget = 2000000);
std::optional<MoveProgram> exchangeFromTranslation(const ConstraintModel& m, const std::vector<MoveProgram>& trPrograms,
                                                   const std::vector<Site>& C, int l, Direction e);

struct CertifyResult {
    std::optional<MobileClusterCertificate> certificate;
    std::string failure;
};

CertifyResult certify(const ConstraintModel& m, const std::vector<Site>& C, int l, std::uint64_t budget = 2000000);
// Fills the reports and pointwise flags; throws ValidationError on an invalid program.
void checkCertificate(MobileClusterCertificate& cert, const ConstraintModel& m);

// Hand-built certificates and library moves.
MobileClusterCertificate bt1dCertificate();
MoveProgram bt1dExMinus1Composition(const MobileClusterCertificate& cert);
MoveProgram bt2dTr2Figure();
MobileClusterCertificate bt2dCertificate();

MoveProgram flipMove(const ConstraintModel& m, const MobileClusterCertificate& cert, const Site& z, int L);

std::vector<Site> hatCluster(const MobileClusterCertificate& cert);
MoveProgram hopMove(const ConstraintModel& m, const MobileClusterCertificate& cert);
MoveProgram sigmaMove(const ConstraintModel& m, const MobileClusterCertificate& cert, int axis);

// A^alpha = C u (l e_alpha + C), ordered by decreasing alpha-coordinate.
std::vector<Site> defaultAuxSet(const MobileClusterCertificate& cert, int axis);
MoveProgram auxMove(const ConstraintModel& m, const MobileClusterCertificate& cert, int axis, int i);
// Guarded union over all i.
MoveProgram auxMoveUnion(const ConstraintModel& m, const MobileClusterCertificate& cert, int axis);
// One-step exchange guarded by the auxiliary clauses; valid when each clause enables the edge.
MoveProgram trivialAuxMove(const ConstraintModel& m, const ConstraintModel& aux, int axis);

// Cluster routing used by the library constructions.
std::optional<MoveProgram> exchangeViaCluster(const ConstraintModel& m, const MobileClusterCertificate& cert,
                                              const Site& home, const Site& a, const Site& b,
                                              const std::set<Site>& avoid, int radius = 12);
std::optional<MoveProgram> routeCluster(const MobileClusterCertificate& cert, const Site& from, const Site& to,
                                        const std::set<Site>& avoid, int radius = 12);

std::string moveToJson(const MoveProgram& p);
MoveProgram moveFromJson(const std::string& text);
std::string certificateToJson(const MobileClusterCertificate& cert, const ConstraintModel& m);
MobileClusterCertificate certificateFromJson(const std::string& text, ConstraintModel* modelOut = nullptr);

} // namespace kclg
