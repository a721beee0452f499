#pragma once

#include "kclg/lattice.hpp"
#include "kclg/models.hpp"
#include "kclg/moves.hpp"
#include "kclg/transport.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace kclg {

// A permutation applied in the tracer frame. Its rate is c_{x,x+e}(zeta) (when
// edgeRate is set) times the indicator that every site in `empty` is empty.
struct TracerGenerator {
    std::string name;
    FinitePermutation sigma;
    Site jump;  // sigma(0)
    bool edgeRate = false;
    Site edgeX;
    int edgeAxis = 0;
    std::vector<Site> empty;

    bool operator==(const TracerGenerator& o) const {
        return sigma == o.sigma && edgeRate == o.edgeRate && (!edgeRate || (edgeX == o.edgeX && edgeAxis == o.edgeAxis)) &&
               empty == o.empty;
    }
};

class PermutationDynamics {
public:
    enum class Kind { Kc, Aux };

    static PermutationDynamics kc(ConstraintModel m);
    // sigmas[a] carries the tracer to e_a and `hat` to hat + e_a; the reversed family is added.
    static PermutationDynamics aux(int dim, std::vector<Site> hat, const std::vector<FinitePermutation>& sigmas);

    Kind kind() const { return kind_; }
    int dim() const { return dim_; }
    const ConstraintModel& model() const { return model_; }
    const std::vector<Site>& hat() const { return hat_; }

    // Generators that move the tracer or change a site of `near` (Kc: edges meeting near u {0}).
    std::vector<TracerGenerator> generators(const std::vector<Site>& near) const;
    // The finite family (Aux) or the edges within distance 1 of the origin (Kc).
    std::vector<TracerGenerator> localGenerators() const;
    // sigma' = tau_{-sigma(0)} sigma^{-1} tau_{sigma(0)} with its rate.
    TracerGenerator reversal(const TracerGenerator& g) const;
    bool contains(const TracerGenerator& g) const;
    // Every site the rate of g reads (relative to the tracer).
    std::vector<Site> readSites(const TracerGenerator& g) const;

    template <class Occ>
    double rate(const TracerGenerator& g, Occ&& occ) const {
        for (const Site& s : g.empty)
            if (occ(s)) return 0.0;
        if (!g.edgeRate) return 1.0;
        return model_.rate(g.edgeAxis, [&](const Site& o) { return static_cast<int>(occ(g.edgeX + o)); });
    }

    // Kc generator of the edge (x, x + e_axis).
    TracerGenerator edgeGenerator(const Site& x, int axis) const;

private:

    Kind kind_ = Kind::Kc;
    int dim_ = 1;
    ConstraintModel model_;
    std::vector<Site> hat_;
    std::vector<TracerGenerator> family_;
};

PermutationDynamics kcTracerDynamics(const ConstraintModel& m);
// Sigma moves of the certificate, hat cluster {-e1} u ((l+2)e1 + C). Needs d >= 2.
PermutationDynamics auxTracerDynamics(const ConstraintModel& m, const MobileClusterCertificate& cert);

struct ReversalReport {
    bool structural = true;       // sigma' is in the family with the same rate rule
    bool detailedBalance = true;  // c_sigma(zeta) = c_sigma'(zeta') pointwise
    bool tracerOccupied = true;   // the new tracer site is occupied whenever the rate is positive
    std::uint64_t configsChecked = 0;
    std::string witness;
    bool ok() const { return structural && detailedBalance && tracerOccupied; }
};

ReversalReport checkReversal(const PermutationDynamics& dyn, std::uint64_t budget = 0);

// 1/2 sum_sigma nu_0[c_sigma (u.sigma(0) + f(tau_{-sigma(0)} sigma zeta) - f(zeta))^2], with
// nu_0 the product measure conditioned on an occupied origin. The origin is
// dropped from the window.
VariationalProblem selfDiffusionQP(const PermutationDynamics& dyn, const std::vector<double>& u,
                                   const std::vector<Site>& window, double q,
                                   const Estimator& est = Estimator::exact());
double selfDiffusionWindow(const PermutationDynamics& dyn, const std::vector<double>& u,
                           const std::vector<Site>& window, double q, const Estimator& est = Estimator::exact());

// 1/2 q^n |u|^2
double auxSelfDiffusionClosedForm(double q, int clusterSize, const std::vector<double>& u);

// Tracer-frame environment after applying g: zeta'(y) = zeta(sigma^{-1}(y + sigma(0))).
Site environmentSource(const TracerGenerator& g, const Site& y);

} // namespace kclg
