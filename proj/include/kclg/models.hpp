#pragma once

#include "kclg/lattice.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kclg {

enum class RateMode { IndicatorAny, WeightedCount, Custom };

std::string rateModeName(RateMode m);
RateMode parseRateMode(const std::string& name);

struct Clause {
    std::vector<Site> offsets;  // relative to the lower endpoint x of edge (x, x+e)
    double weight = 1.0;
};

struct EnablingFamily {
    int axis = 0;
    std::vector<Clause> clauses;
};

// Occupancy reader relative to the lower endpoint of an edge.
using OffsetReader = std::function<int(const Site&)>;
using CustomRate = std::function<double(int axis, const OffsetReader& occ)>;

class ConstraintModel {
public:
    ConstraintModel() = default;
    ConstraintModel(std::string name, int dim, int range, RateMode mode, double cMax,
                    std::vector<EnablingFamily> families);
    // Arbitrary rate function; `support[axis]` lists every offset the function may read.
    static ConstraintModel custom(std::string name, int dim, int range, double cMax, CustomRate fn,
                                  std::vector<std::vector<Site>> support);

    const std::string& name() const { return name_; }
    int dim() const { return dim_; }
    int range() const { return range_; }
    RateMode mode() const { return mode_; }
    double cMax() const { return cMax_; }
    const EnablingFamily& family(int axis) const { return families_[axis]; }
    const std::vector<EnablingFamily>& families() const { return families_; }
    std::vector<Site> support(int axis) const;

    // Optional auxiliary-set metadata (per axis A^alpha), kept for round trips.
    const std::vector<std::vector<Site>>& auxSets() const { return auxSets_; }
    void setAuxSets(std::vector<std::vector<Site>> sets) { auxSets_ = std::move(sets); }

    template <class Occ>
    double rate(int axis, Occ&& occ) const {
        if (mode_ == RateMode::Custom) return custom_(axis, OffsetReader(occ));
        double r = 0.0;
        for (const Clause& cl : families_[axis].clauses) {
            bool empty = true;
            for (const Site& o : cl.offsets)
                if (occ(o)) {
                    empty = false;
                    break;
                }
            if (!empty) continue;
            if (mode_ == RateMode::IndicatorAny) return 1.0;
            r += cl.weight;
        }
        return r;
    }

    // Rate of the edge (x, x+e) for e = dir; a negative direction resolves to the
    // edge (x-e_a, x) evaluated relative to x-e_a.
    double edgeRate(const Configuration& c, const Site& x, Direction dir) const;

    std::string hash() const;

private:
    std::string name_;
    int dim_ = 0;
    int range_ = 0;
    RateMode mode_ = RateMode::IndicatorAny;
    double cMax_ = 1.0;
    std::vector<EnablingFamily> families_;
    std::vector<std::vector<Site>> customSupport_;
    std::vector<std::vector<Site>> auxSets_;
    CustomRate custom_;
};

ConstraintModel bt1d();
ConstraintModel bt2d();
ConstraintModel glt1d();
// Unconstrained exclusion (every edge has rate 1).
ConstraintModel sep(int dim);
ConstraintModel builtinModel(const std::string& name);
std::vector<std::string> builtinModelNames();

double reservoirRate(const Configuration& c, const Site& x, double q);

// Compiled per-edge clause tables for one model on one finite domain.
class EdgeTable {
public:
    struct Edge {
        int x, y, axis;
    };

    EdgeTable(const ConstraintModel& m, const Domain& d);

    const std::vector<Edge>& edges() const { return edges_; }
    // Edges whose rate or endpoints involve site index s.
    const std::vector<int>& touching(int s) const { return touching_[s]; }
    const Domain& domain() const { return dom_; }

    // occ(i) returns the occupancy of site index i.
    template <class Occ>
    double rate(std::size_t e, Occ&& occ) const {
        if (custom_) {
            const Site x = dom_.site(edges_[e].x);
            return model_->rate(edges_[e].axis, [&](const Site& o) {
                int i = dom_.resolve(x + o);
                return i < 0 ? dom_.fill() : occ(i);
            });
        }
        double r = 0.0;
        for (int c = clauseBegin_[e]; c < clauseBegin_[e + 1]; ++c) {
            bool empty = true;
            for (int k = siteBegin_[c]; k < siteBegin_[c + 1]; ++k)
                if (occ(sites_[k])) {
                    empty = false;
                    break;
                }
            if (!empty) continue;
            if (indicator_) return 1.0;
            r += weight_[c];
        }
        return r;
    }

private:
    Domain dom_;
    const ConstraintModel* model_ = nullptr;
    bool custom_ = false;
    bool indicator_ = true;
    std::vector<Edge> edges_;
    std::vector<int> clauseBegin_, siteBegin_, sites_;
    std::vector<double> weight_;
    std::vector<std::vector<int>> touching_;
};

struct AxiomReport {
    struct Entry {
        std::string name;
        bool pass = true;
        bool structural = false;
        std::string detail;
        std::string witness;  // empty offsets of a failing window configuration
    };
    std::string model;
    std::string method;  // "exhaustive" or "clause-lattice"
    std::vector<Entry> entries;
    bool allPass() const;
};

AxiomReport verifyAxioms(const ConstraintModel& m, std::uint64_t budget = 1ULL << 22);

// Versioned JSON model spec.
std::string modelToJson(const ConstraintModel& m);
ConstraintModel modelFromJson(const std::string& text);

// Orders an auxiliary set by decreasing coordinate along `axis` (ties by decreasing site order).
std::vector<Site> orderAuxSet(std::vector<Site> A, int axis);
// A_i = {x_j + e : j <= i} u {x_j : j > i} for an ordered set, i = 0..n.
std::vector<Site> auxShifted(const std::vector<Site>& ordered, int axis, int i);

} // namespace kclg
