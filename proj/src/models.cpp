#include "kclg/models.hpp"

#include "kclg/error.hpp"
#include "kclg/util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace kclg {

using nlohmann::json;

std::string rateModeName(RateMode m) {
    switch (m) {
    case RateMode::IndicatorAny: return "indicatorAny";
    case RateMode::WeightedCount: return "weightedCount";
    case RateMode::Custom: return "custom";
    }
    return "?";
}

RateMode parseRateMode(const std::string& name) {
    if (name == "indicatorAny") return RateMode::IndicatorAny;
    if (name == "weightedCount") return RateMode::WeightedCount;
    throw SpecError("unknown rateMode '" + name + "'");
}

ConstraintModel::ConstraintModel(std::string name, int dim, int range, RateMode mode, double cMax,
                                 std::vector<EnablingFamily> families)
    : name_(std::move(name)), dim_(dim), range_(range), mode_(mode), cMax_(cMax) {
    if (dim < 1 || dim > kMaxDim) throw SpecError("dimension must be in 1.." + std::to_string(kMaxDim));
    if (range < 0) throw SpecError("range must be >= 0");
    if (!(cMax > 0)) throw SpecError("cMax must be positive");
    if (mode == RateMode::Custom) throw SpecError("use ConstraintModel::custom for custom rates");
    if (static_cast<int>(families.size()) != dim) throw SpecError("need one enabling family per axis");
    families_.resize(dim);
    for (auto& f : families) {
        if (f.axis < 0 || f.axis >= dim) throw SpecError("family axis out of range");
        const Site e = Site::unit(dim, f.axis);
        for (const Clause& cl : f.clauses) {
            if (!(cl.weight > 0)) throw SpecError("clause weight must be positive");
            std::set<Site> seen;
            for (const Site& o : cl.offsets) {
                if (o.dim != dim) throw SpecError("clause offset has wrong dimension");
                if (o == Site(dim) || o == e)
                    throw SpecError("clause offset " + o.str() + " hits an endpoint of the edge on axis " +
                                    std::to_string(f.axis + 1));
                for (int a = 0; a < dim; ++a)
                    if (std::abs(o[a]) > range) throw SpecError("clause offset " + o.str() + " exceeds the range");
                if (!seen.insert(o).second) throw SpecError("duplicate offset " + o.str() + " in clause");
            }
        }
        families_[f.axis] = std::move(f);
    }
}

ConstraintModel ConstraintModel::custom(std::string name, int dim, int range, double cMax, CustomRate fn,
                                        std::vector<std::vector<Site>> support) {
    ConstraintModel m;
    m.name_ = std::move(name);
    m.dim_ = dim;
    m.range_ = range;
    m.mode_ = RateMode::Custom;
    m.cMax_ = cMax;
    m.families_.resize(dim);
    for (int a = 0; a < dim; ++a) m.families_[a].axis = a;
    if (static_cast<int>(support.size()) != dim) throw SpecError("need a support list per axis");
    m.customSupport_ = std::move(support);
    m.custom_ = std::move(fn);
    return m;
}

std::vector<Site> ConstraintModel::support(int axis) const {
    if (mode_ == RateMode::Custom) return customSupport_[axis];
    std::set<Site> s;
    for (const Clause& cl : families_[axis].clauses) s.insert(cl.offsets.begin(), cl.offsets.end());
    return {s.begin(), s.end()};
}

double ConstraintModel::edgeRate(const Configuration& c, const Site& x, Direction dir) const {
    const Site e = dir.unit(dim_);
    const Site base = dir.sign > 0 ? x : x + e;
    return rate(dir.axis, [&](const Site& o) { return c.at(base + o); });
}

std::string ConstraintModel::hash() const { return fnv1aHex(modelToJson(*this)); }

ConstraintModel bt1d() {
    return ConstraintModel("bt1d", 1, 2, RateMode::IndicatorAny, 1.0,
                           {EnablingFamily{0, {Clause{{Site{-1}}, 1.0}, Clause{{Site{2}}, 1.0}}}});
}

ConstraintModel bt2d() {
    std::vector<EnablingFamily> fam;
    for (int a = 0; a < 2; ++a) {
        Site e = Site::unit(2, a);
        fam.push_back(EnablingFamily{a, {Clause{{-e}, 1.0}, Clause{{e * 2}, 1.0}}});
    }
    return ConstraintModel("bt2d", 2, 2, RateMode::IndicatorAny, 1.0, fam);
}

ConstraintModel glt1d() {
    return ConstraintModel("glt1d", 1, 2, RateMode::WeightedCount, 2.0,
                           {EnablingFamily{0, {Clause{{Site{-1}}, 1.0}, Clause{{Site{2}}, 1.0}}}});
}

ConstraintModel sep(int dim) {
    std::vector<EnablingFamily> fam;
    for (int a = 0; a < dim; ++a) fam.push_back(EnablingFamily{a, {Clause{{}, 1.0}}});
    return ConstraintModel("sep" + std::to_string(dim) + "d", dim, 1, RateMode::IndicatorAny, 1.0, fam);
}

ConstraintModel builtinModel(const std::string& name) {
    if (name == "bt1d") return bt1d();
    if (name == "bt2d") return bt2d();
    if (name == "glt1d") return glt1d();
    if (name == "sep1d") return sep(1);
    if (name == "sep2d") return sep(2);
    throw ArgumentError("unknown model '" + name + "'");
}

std::vector<std::string> builtinModelNames() { return {"bt1d", "bt2d", "glt1d", "sep1d", "sep2d"}; }

double reservoirRate(const Configuration& c, const Site& x, double q) {
    if (c.domain().boundary() == Boundary::Periodic || !c.domain().onBoundary(x))
        throw ArgumentError("site " + x.str() + " is not on the boundary of the box");
    int eta = c.at(x);
    return q * eta + (1.0 - q) * (1 - eta);
}

EdgeTable::EdgeTable(const ConstraintModel& m, const Domain& d)
    : dom_(d), model_(&m), custom_(m.mode() == RateMode::Custom), indicator_(m.mode() == RateMode::IndicatorAny) {
    if (m.dim() != d.dim()) throw ArgumentError("model and domain dimensions differ");
    touching_.resize(d.size());
    clauseBegin_.push_back(0);
    siteBegin_.push_back(0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Site x = d.site(static_cast<int>(i));
        for (int a = 0; a < d.dim(); ++a) {
            int j = d.resolve(x + Site::unit(d.dim(), a));
            if (j < 0 || j == static_cast<int>(i)) continue;
            const int e = static_cast<int>(edges_.size());
            edges_.push_back({static_cast<int>(i), j, a});
            std::set<int> touched{static_cast<int>(i), j};
            if (custom_) {
                for (const Site& o : m.support(a)) {
                    int k = d.resolve(x + o);
                    if (k >= 0) touched.insert(k);
                }
            } else {
                for (const Clause& cl : m.family(a).clauses) {
                    std::vector<int> idx;
                    bool impossible = false;
                    for (const Site& o : cl.offsets) {
                        int k = d.resolve(x + o);
                        if (k < 0) {
                            if (d.fill()) impossible = true;
                            continue;
                        }
                        idx.push_back(k);
                    }
                    if (impossible) continue;
                    std::sort(idx.begin(), idx.end());
                    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
                    for (int k : idx) {
                        sites_.push_back(k);
                        touched.insert(k);
                    }
                    siteBegin_.push_back(static_cast<int>(sites_.size()));
                    weight_.push_back(cl.weight);
                }
            }
            clauseBegin_.push_back(static_cast<int>(weight_.size()));
            for (int k : touched) touching_[k].push_back(e);
        }
    }
}

bool AxiomReport::allPass() const {
    return std::all_of(entries.begin(), entries.end(), [](const Entry& e) { return e.pass; });
}

namespace {

std::string witnessString(const std::vector<Site>& window, std::uint64_t mask) {
    std::string s = "empty={";
    bool first = true;
    for (std::size_t k = 0; k < window.size(); ++k)
        if (!((mask >> k) & 1)) {
            if (!first) s += ",";
            s += window[k].str();
            first = false;
        }
    return s + "}";
}

bool inRange(double r, double cMax) { return r == 0.0 || (r >= 1.0 - 1e-12 && r <= cMax + 1e-12); }

} // namespace

AxiomReport verifyAxioms(const ConstraintModel& m, std::uint64_t budget) {
    AxiomReport rep;
    rep.model = m.name();
    const int d = m.dim();
    auto entry = [](const char* name) {
        AxiomReport::Entry e;
        e.name = name;
        return e;
    };
    AxiomReport::Entry range = entry("rates in {0} u [1,cMax]"), indep = entry("independent of the edge endpoints"),
                       nondeg = entry("nondegenerate"), mono = entry("monotone in emptying sites"),
                       homog = entry("translation invariant"), finite = entry("finite range");
    homog.structural = true;
    homog.detail = "rates are read relative to the edge";
    finite.structural = true;
    finite.detail = "all offsets within [-R,R]^d";
    for (int a = 0; a < d; ++a)
        for (const Site& o : m.support(a))
            for (int b = 0; b < d; ++b)
                if (std::abs(o[b]) > m.range()) {
                    finite.pass = false;
                    finite.detail = "offset " + o.str() + " exceeds range";
                }

    std::uint64_t total = 0;
    std::vector<std::vector<Site>> windows(d);
    for (int a = 0; a < d; ++a) {
        std::set<Site> w{Site(d), Site::unit(d, a)};
        for (const Site& o : m.support(a)) w.insert(o);
        windows[a] = {w.begin(), w.end()};
        if (windows[a].size() >= 63) total = budget + 1;
        else total += 1ULL << windows[a].size();
    }

    if (total <= budget) {
        rep.method = "exhaustive";
        bool sawPositive = false, sawZero = false;
        for (int a = 0; a < d; ++a) {
            const auto& w = windows[a];
            std::map<Site, int> pos;
            for (std::size_t k = 0; k < w.size(); ++k) pos[w[k]] = static_cast<int>(k);
            const int i0 = pos[Site(d)], i1 = pos[Site::unit(d, a)];
            const std::uint64_t n = 1ULL << w.size();
            std::vector<double> r(n);
            for (std::uint64_t mask = 0; mask < n; ++mask)
                r[mask] = m.rate(a, [&](const Site& o) {
                    auto it = pos.find(o);
                    return it == pos.end() ? 1 : static_cast<int>((mask >> it->second) & 1);
                });
            for (std::uint64_t mask = 0; mask < n; ++mask) {
                if (range.pass && !inRange(r[mask], m.cMax())) {
                    range.pass = false;
                    range.detail = "axis " + std::to_string(a + 1) + " rate " + std::to_string(r[mask]);
                    range.witness = witnessString(w, mask);
                }
                if (indep.pass && (r[mask] != r[mask ^ (1ULL << i0)] || r[mask] != r[mask ^ (1ULL << i1)])) {
                    indep.pass = false;
                    indep.detail = "axis " + std::to_string(a + 1);
                    indep.witness = witnessString(w, mask);
                }
                if (r[mask] >= 1.0 - 1e-12) sawPositive = true;
                if (r[mask] == 0.0) sawZero = true;
                for (std::size_t k = 0; k < w.size() && mono.pass; ++k)
                    if ((mask >> k) & 1) {
                        if (r[mask ^ (1ULL << k)] < r[mask] - 1e-12) {
                            mono.pass = false;
                            mono.detail = "axis " + std::to_string(a + 1) + " emptying " + w[k].str();
                            mono.witness = witnessString(w, mask);
                        }
                    }
            }
        }
        nondeg.pass = sawPositive && sawZero;
        if (!nondeg.pass) nondeg.detail = sawPositive ? "no configuration with rate 0" : "no configuration with rate >= 1";
    } else if (m.mode() != RateMode::Custom) {
        // Clause models: the rate is a function of which clauses are satisfied,
        // so enumerating unions of clause offset sets reaches every rate value.
        rep.method = "clause-lattice";
        indep.structural = true;
        indep.detail = "no clause offset equals an endpoint";
        mono.structural = true;
        mono.detail = "positive clause weights";
        bool sawPositive = false, sawZero = false;
        for (int a = 0; a < d; ++a) {
            const auto& cls = m.family(a).clauses;
            if (cls.size() > 24) throw BudgetError("too many clauses for the clause-lattice check");
            for (std::uint64_t s = 0; s < (1ULL << cls.size()); ++s) {
                std::set<Site> empty;
                for (std::size_t i = 0; i < cls.size(); ++i)
                    if ((s >> i) & 1) empty.insert(cls[i].offsets.begin(), cls[i].offsets.end());
                double r = m.rate(a, [&](const Site& o) { return empty.count(o) ? 0 : 1; });
                if (range.pass && !inRange(r, m.cMax())) {
                    range.pass = false;
                    range.detail = "axis " + std::to_string(a + 1) + " rate " + std::to_string(r);
                    range.witness = "empty={";
                    for (const Site& o : empty) range.witness += o.str() + " ";
                    range.witness += "}";
                }
                if (r >= 1.0 - 1e-12) sawPositive = true;
                if (r == 0.0) sawZero = true;
            }
        }
        nondeg.pass = sawPositive && sawZero;
    } else {
        throw BudgetError("axiom window exceeds the enumeration budget");
    }
    rep.entries = {range, indep, nondeg, mono, homog, finite};
    return rep;
}

namespace {

json siteJson(const Site& s) { return s.coords(); }

Site siteFrom(const json& j, int dim, const std::string& where) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        throw SpecError(where + ": expected an integer vector of length " + std::to_string(dim));
    std::vector<int> v;
    for (const auto& x : j) {
        if (!x.is_number_integer()) throw SpecError(where + ": offsets must be integers");
        v.push_back(x.get<int>());
    }
    return Site::fromVector(v);
}

template <class T>
T field(const json& j, const char* key) {
    if (!j.contains(key)) throw SpecError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw SpecError(std::string("field '") + key + "' has the wrong type");
    }
}

} // namespace

std::string modelToJson(const ConstraintModel& m) {
    if (m.mode() == RateMode::Custom) throw SpecError("custom-rate models are not serializable");
    json j;
    j["schema"] = "kclg.model/1";
    j["name"] = m.name();
    j["dimension"] = m.dim();
    j["range"] = m.range();
    j["cMax"] = m.cMax();
    j["rateMode"] = rateModeName(m.mode());
    json fams = json::array();
    for (const auto& f : m.families()) {
        json jf;
        jf["axis"] = f.axis + 1;
        json cls = json::array();
        for (const Clause& cl : f.clauses) {
            json jc;
            json offs = json::array();
            for (const Site& o : cl.offsets) offs.push_back(siteJson(o));
            jc["offsets"] = offs;
            jc["weight"] = cl.weight;
            cls.push_back(jc);
        }
        jf["clauses"] = cls;
        fams.push_back(jf);
    }
    j["families"] = fams;
    if (!m.auxSets().empty()) {
        json aux = json::array();
        for (const auto& set : m.auxSets()) {
            json js = json::array();
            for (const Site& s : set) js.push_back(siteJson(s));
            aux.push_back(js);
        }
        j["auxSets"] = aux;
    }
    return j.dump(2) + "\n";
}

ConstraintModel modelFromJson(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SpecError(std::string("model spec is not valid JSON: ") + e.what());
    }
    if (field<std::string>(j, "schema") != "kclg.model/1") throw SpecError("field 'schema': unsupported version");
    const int dim = field<int>(j, "dimension");
    if (dim < 1 || dim > kMaxDim) throw SpecError("field 'dimension' out of range");
    std::vector<EnablingFamily> fams;
    const json& jf = j.at("families");
    if (!jf.is_array()) throw SpecError("field 'families' must be an array");
    for (const auto& f : jf) {
        EnablingFamily fam;
        fam.axis = field<int>(f, "axis") - 1;
        if (!f.contains("clauses") || !f["clauses"].is_array()) throw SpecError("field 'clauses' must be an array");
        for (const auto& c : f["clauses"]) {
            Clause cl;
            cl.weight = c.contains("weight") ? field<double>(c, "weight") : 1.0;
            if (!c.contains("offsets") || !c["offsets"].is_array()) throw SpecError("field 'offsets' must be an array");
            for (const auto& o : c["offsets"]) cl.offsets.push_back(siteFrom(o, dim, "field 'offsets'"));
            fam.clauses.push_back(std::move(cl));
        }
        fams.push_back(std::move(fam));
    }
    ConstraintModel m(field<std::string>(j, "name"), dim, field<int>(j, "range"),
                      parseRateMode(field<std::string>(j, "rateMode")), field<double>(j, "cMax"), std::move(fams));
    if (j.contains("auxSets")) {
        std::vector<std::vector<Site>> sets;
        for (const auto& s : j["auxSets"]) {
            std::vector<Site> v;
            for (const auto& o : s) v.push_back(siteFrom(o, dim, "field 'auxSets'"));
            sets.push_back(std::move(v));
        }
        m.setAuxSets(std::move(sets));
    }
    return m;
}

std::vector<Site> orderAuxSet(std::vector<Site> A, int axis) {
    std::sort(A.begin(), A.end(), [axis](const Site& a, const Site& b) {
        if (a[axis] != b[axis]) return a[axis] > b[axis];
        return b < a;
    });
    A.erase(std::unique(A.begin(), A.end()), A.end());
    return A;
}

std::vector<Site> auxShifted(const std::vector<Site>& ordered, int axis, int i) {
    std::vector<Site> out;
    out.reserve(ordered.size());
    for (std::size_t j = 0; j < ordered.size(); ++j)
        out.push_back(static_cast<int>(j) < i ? ordered[j] + Site::unit(ordered[j].dim, axis) : ordered[j]);
    return out;
}

} // namespace kclg
