#include "kclg/moves.hpp"

#include "kclg/error.hpp"
#include "kclg/util.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <unordered_map>

namespace kclg {

using nlohmann::json;

bool MoveStep::operator==(const MoveStep& o) const {
    if (kind != o.kind || !(x == o.x)) return false;
    return kind == Kind::BoundaryFlip || e == o.e;
}

std::string MoveStep::str() const {
    if (kind == Kind::BoundaryFlip) return "flip(" + x.str() + ")";
    return "(" + x.str() + "," + e.str() + ")";
}

namespace {

void addUnique(std::vector<Site>& v, const Site& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

Guard mergeGuards(const Guard& a, const Guard& b) {
    Guard g = a;
    for (const Site& s : b.empty) addUnique(g.empty, s);
    for (const Site& s : b.occupied) addUnique(g.occupied, s);
    return g;
}

template <class F>
Guard mapGuard(const Guard& g, F&& f) {
    Guard out;
    for (const Site& s : g.empty) out.empty.push_back(f(s));
    for (const Site& s : g.occupied) out.occupied.push_back(f(s));
    return out;
}

Box hullWith(Box b, const Site& s) {
    if (b.lo.dim == 0) return {s, s};
    return b.hull(s);
}

Box hullBoxes(const Box& a, const Box& b) {
    if (a.lo.dim == 0) return b;
    if (b.lo.dim == 0) return a;
    return a.hull(b.lo).hull(b.hi);
}

bool boxInside(const Box& inner, const Box& outer) {
    return inner.lo.dim == 0 || (outer.contains(inner.lo) && outer.contains(inner.hi));
}

std::vector<Site> sortedSet(std::vector<Site> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

} // namespace

MoveProgram MoveProgram::identity(int dim) {
    MoveProgram p;
    p.name = "Id";
    p.dim = dim;
    p.branches.push_back({});
    return p;
}

MoveProgram MoveProgram::fromSteps(std::string name, int dim, std::vector<MoveStep> steps, Guard domain) {
    MoveProgram p;
    p.name = std::move(name);
    p.dim = dim;
    p.domain = std::move(domain);
    p.branches.push_back({Guard{}, std::move(steps)});
    p.fitWindow();
    return p;
}

std::size_t MoveProgram::maxSteps() const {
    std::size_t t = 0;
    for (const Branch& b : branches) t = std::max(t, b.steps.size());
    return t;
}

MoveProgram MoveProgram::translated(const Site& z) const {
    MoveProgram p = *this;
    auto sh = [&](const Site& s) { return s + z; };
    if (p.window.lo.dim) p.window = window.translated(z);
    for (Site& s : p.extraSites) s = s + z;
    p.domain = mapGuard(domain, sh);
    for (Branch& b : p.branches) {
        b.guard = mapGuard(b.guard, sh);
        for (MoveStep& st : b.steps) st = st.translated(z);
    }
    for (Ghost& g : p.ghosts) {
        g.site = g.site + z;
        g.ref = g.ref + z;
    }
    return p;
}

FinitePermutation MoveProgram::permutation(std::size_t branch) const {
    FinitePermutation s;
    for (const MoveStep& st : branches.at(branch).steps)
        if (st.kind == MoveStep::Kind::Exchange) s.leftMultiply(st.x, st.other());
    return s;
}

std::set<Site> MoveProgram::touchedSites() const {
    std::set<Site> out;
    for (const Branch& b : branches)
        for (const MoveStep& st : b.steps) {
            out.insert(st.x);
            if (st.kind == MoveStep::Kind::Exchange) out.insert(st.other());
        }
    return out;
}

void MoveProgram::fitWindow() {
    Box b;
    for (const Site& s : touchedSites()) b = hullWith(b, s);
    for (const Site& s : domain.empty) b = hullWith(b, s);
    for (const Site& s : domain.occupied) b = hullWith(b, s);
    for (const Branch& br : branches) {
        for (const Site& s : br.guard.empty) b = hullWith(b, s);
        for (const Site& s : br.guard.occupied) b = hullWith(b, s);
    }
    for (const Site& s : extraSites) b = hullWith(b, s);
    if (b.lo.dim == 0) b = {Site(dim), Site(dim)};
    window = b;
}

MoveProgram compose(const MoveProgram& m1, const MoveProgram& m2, std::optional<Box> bound) {
    if (m1.dim != m2.dim) throw ArgumentError("compose: dimension mismatch");
    MoveProgram out;
    out.name = m2.name + " o " + m1.name;
    out.dim = m1.dim;
    out.domain = m1.domain;
    out.extraSites = m1.extraSites;
    for (const Site& s : m2.extraSites) addUnique(out.extraSites, s);
    out.ghosts = m1.ghosts;
    for (const Ghost& g : m2.ghosts) {
        bool seen = std::any_of(out.ghosts.begin(), out.ghosts.end(), [&](const Ghost& h) { return h.site == g.site; });
        if (!seen) out.ghosts.push_back(g);
    }
    for (std::size_t i = 0; i < m1.branches.size(); ++i) {
        const FinitePermutation s1 = m1.permutation(i);
        // eta_{T1}(y) = eta(s1^{-1}(y))
        auto pull = [&](const Site& y) { return s1.preimage(y); };
        for (const Branch& b2 : m2.branches) {
            Branch b;
            b.guard = mergeGuards(m1.branches[i].guard, mapGuard(b2.guard, pull));
            b.steps = m1.branches[i].steps;
            b.steps.insert(b.steps.end(), b2.steps.begin(), b2.steps.end());
            out.branches.push_back(std::move(b));
        }
    }
    out.window = hullBoxes(m1.window, m2.window);
    if (bound && !boxInside(out.window, *bound)) throw ArgumentError("compose: window overflows the declared bound");
    return out;
}

MoveProgram inverse(const MoveProgram& m) {
    if (!m.deterministic()) throw ArgumentError("inverse: move is not deterministic");
    MoveProgram out = m;
    out.name = m.name + "^-1";
    const FinitePermutation s = m.permutation();
    for (const MoveStep& st : m.steps())
        if (st.kind != MoveStep::Kind::Exchange) throw ArgumentError("inverse: boundary flips are not invertible here");
    out.domain = mapGuard(m.domain, [&](const Site& y) { return s(y); });
    std::reverse(out.branches[0].steps.begin(), out.branches[0].steps.end());
    return out;
}

// ---------------------------------------------------------------- validation

namespace {

struct LocalSites {
    std::map<Site, int> idx;
    std::vector<Site> sites;
    int add(const Site& s) {
        auto [it, fresh] = idx.emplace(s, static_cast<int>(sites.size()));
        if (fresh) sites.push_back(s);
        return it->second;
    }
    int find(const Site& s) const {
        auto it = idx.find(s);
        return it == idx.end() ? -1 : it->second;
    }
};

struct Read {
    int k;
    bool inBox;
};

struct CStep {
    MoveStep step;
    bool flip = false;
    int i = -1, j = -1;
    bool iIn = true, jIn = true;
    int axis = 0;
    std::vector<Read> reads;
    std::vector<int> clauseBegin;
    std::vector<Site> offsets;  // custom models: support order
};

class Engine {
public:
    Engine(const MoveProgram& p, const MoveContext& ctx) : p_(p), ctx_(ctx), m_(*ctx.model) {
        hasWindow_ = ctx.window.lo.dim != 0;
        if (ctx.reservoir) {
            if (!hasWindow_) throw ArgumentError("reservoir validation needs the box as window");
            std::vector<int> ext;
            for (int a = 0; a < p.dim; ++a) {
                if (ctx.window.lo[a] != 1) throw ArgumentError("reservoir box must start at 1");
                ext.push_back(ctx.window.hi[a]);
            }
            dom_ = Domain(ext, Boundary::Empty);
            for (const Site& s : ctx.window.sites()) L_.add(s);
            nBox_ = static_cast<int>(L_.sites.size());
        }
        auto addGuard = [&](const Guard& g) {
            for (const Site& s : g.empty) L_.add(s);
            for (const Site& s : g.occupied) L_.add(s);
        };
        addGuard(p.domain);
        for (const Branch& b : p.branches) addGuard(b.guard);
        if (ctx.reservoir)
            for (const Ghost& g : p.ghosts) {
                L_.add(g.site);
                if (g.init == Ghost::Init::ComplementOf) L_.add(g.ref);
            }
        if (ctx.tracer) L_.add(*ctx.tracer);
        for (const Branch& b : p.branches)
            for (const MoveStep& st : b.steps) {
                L_.add(st.x);
                if (st.kind == MoveStep::Kind::Exchange) L_.add(st.other());
            }
        // rate reads last; compile
        for (const Branch& b : p.branches) {
            std::vector<CStep> cs;
            for (const MoveStep& st : b.steps) cs.push_back(compile(st));
            steps_.push_back(std::move(cs));
        }
    }

    MoveReport run(ValidationMode mode) {
        MoveReport rep;
        rep.mode = mode;
        const int n = static_cast<int>(L_.sites.size());
        fixed_.assign(n, -1);
        auto fix = [&](const Site& s, int v) {
            int k = L_.find(s);
            if (fixed_[k] >= 0 && fixed_[k] != v)
                throw ArgumentError("ill-formed guards: site " + s.str() + " required both empty and occupied");
            fixed_[k] = static_cast<std::int8_t>(v);
        };
        for (const Site& s : p_.domain.empty) fix(s, 0);
        for (const Site& s : p_.domain.occupied) fix(s, 1);
        for (const Branch& b : p_.branches) checkGuard(b.guard);
        const int outside = ctx_.exteriorFill == Fill::Occupied ? 1 : 0;
        std::vector<int> complementRef(n, -1);
        for (int k = 0; k < n; ++k) {
            if (fixed_[k] >= 0) continue;
            const Site& s = L_.sites[k];
            if (ctx_.reservoir) {
                if (k < nBox_) continue;
                fixed_[k] = 1;
            } else if (hasWindow_ && !ctx_.window.contains(s)) {
                fixed_[k] = static_cast<std::int8_t>(outside);
            }
        }
        if (ctx_.reservoir)
            for (const Ghost& g : p_.ghosts) {
                int k = L_.find(g.site);
                if (k < nBox_) throw ArgumentError("ghost site " + g.site.str() + " lies inside the box");
                if (g.init == Ghost::Init::Empty) fixed_[k] = 0;
                if (g.init == Ghost::Init::Occupied) fixed_[k] = 1;
                if (g.init == Ghost::Init::ComplementOf) complementRef[k] = L_.find(g.ref);
            }
        std::vector<int> freeSites;
        for (int k = 0; k < n; ++k)
            if (fixed_[k] < 0 && complementRef[k] < 0) freeSites.push_back(k);

        if (ctx_.reservoir && mode == ValidationMode::WorstCase)
            throw ArgumentError("worst-case validation does not apply to reservoir moves");
        for (const auto& br : steps_)
            for (const CStep& cs : br)
                if (cs.flip && !ctx_.reservoir) {
                    rep.valid = false;
                    rep.witness = "boundary flip " + cs.step.str() + " outside a reservoir context";
                    return rep;
                }

        lossTracking_ = ctx_.reservoir || !p_.deterministic();
        keyCounts_.clear();
        touch_.clear();
        foot_.clear();
        for (std::size_t b = 0; b < p_.branches.size(); ++b) rep.permutations.push_back(p_.permutation(b));

        std::vector<std::uint8_t> st(n);
        auto loadWith = [&](auto&& bit) {
            for (int k = 0; k < n; ++k)
                if (fixed_[k] >= 0) st[k] = static_cast<std::uint8_t>(fixed_[k]);
            for (std::size_t f = 0; f < freeSites.size(); ++f) st[freeSites[f]] = bit(f);
            for (int k = 0; k < n; ++k)
                if (complementRef[k] >= 0) st[k] = 1 - st[complementRef[k]];
        };
        auto load = [&](std::uint64_t mask) {
            loadWith([&](std::size_t f) -> std::uint8_t { return f < 64 ? (mask >> f) & 1U : 1U; });
        };

        const std::uint64_t budget = ctx_.budget ? ctx_.budget : defaultBudget();
        if (mode == ValidationMode::WorstCase) {
            for (std::size_t b = 0; b < p_.branches.size(); ++b) {
                load(~0ULL);
                for (const Site& s : p_.branches[b].guard.empty) st[L_.find(s)] = 0;
                for (const Site& s : p_.branches[b].guard.occupied) st[L_.find(s)] = 1;
                runOne(st, b, rep);
            }
        } else if (mode == ValidationMode::Exhaustive) {
            if (freeSites.size() > 40 || (1ULL << freeSites.size()) > budget)
                throw BudgetError("exhaustive validation needs 2^" + std::to_string(freeSites.size()) +
                                  " configurations, over the budget");
            const std::uint64_t total = 1ULL << freeSites.size();
            for (std::uint64_t mask = 0; mask < total; ++mask) {
                load(mask);
                int b = matchBranch(st);
                if (b >= 0) runOne(st, b, rep);
            }
        } else {
            Rng rng = makeRng(ctx_.seed, 0x5a3d);
            for (std::uint64_t s = 0; s < ctx_.samples; ++s) {
                loadWith([&](std::size_t) -> std::uint8_t { return rng() & 1U; });
                int b = matchBranch(st);
                if (b >= 0) runOne(st, b, rep);
            }
        }

        std::uint64_t maxc = 1;
        for (const auto& m : keyCounts_)
            for (const auto& kv : m) maxc = std::max<std::uint64_t>(maxc, kv.second);
        rep.maxCollisions = maxc;
        rep.loss = std::log2(static_cast<double>(maxc));
        for (const auto& kv : touch_) rep.touchMax = std::max(rep.touchMax, kv.second);
        rep.footprint.assign(foot_.begin(), foot_.end());
        if (ctx_.reservoir) rep.permutations.clear();
        return rep;
    }

private:
    CStep compile(const MoveStep& st) {
        CStep c;
        c.step = st;
        c.i = L_.find(st.x);
        c.iIn = !ctx_.reservoir || c.i < nBox_;
        if (st.kind == MoveStep::Kind::BoundaryFlip) {
            c.flip = true;
            return c;
        }
        c.j = L_.find(st.other());
        c.jIn = !ctx_.reservoir || c.j < nBox_;
        c.axis = st.e.axis;
        const Site lower = st.e.sign > 0 ? st.x : st.other();
        auto mk = [&](const Site& o) {
            Site s = lower + o;
            int k = L_.add(s);
            bool in = !ctx_.reservoir || ctx_.window.contains(s);
            return Read{k, in};
        };
        if (m_.mode() == RateMode::Custom) {
            c.offsets = m_.support(c.axis);
            for (const Site& o : c.offsets) c.reads.push_back(mk(o));
        } else {
            for (const Clause& cl : m_.family(c.axis).clauses) {
                c.clauseBegin.push_back(static_cast<int>(c.reads.size()));
                for (const Site& o : cl.offsets) c.reads.push_back(mk(o));
            }
            c.clauseBegin.push_back(static_cast<int>(c.reads.size()));
        }
        return c;
    }

    double rate(const CStep& c, const std::vector<std::uint8_t>& st, bool projected) const {
        auto rd = [&](const Read& r) -> int {
            if (projected && !r.inBox) return 0;
            return st[r.k];
        };
        if (m_.mode() == RateMode::Custom) {
            return m_.rate(c.axis, [&](const Site& o) {
                for (std::size_t q = 0; q < c.offsets.size(); ++q)
                    if (c.offsets[q] == o) return rd(c.reads[q]);
                return projected ? 0 : 1;
            });
        }
        const auto& clauses = m_.family(c.axis).clauses;
        double r = 0.0;
        for (std::size_t q = 0; q + 1 < c.clauseBegin.size(); ++q) {
            bool empty = true;
            for (int k = c.clauseBegin[q]; k < c.clauseBegin[q + 1]; ++k)
                if (rd(c.reads[k])) {
                    empty = false;
                    break;
                }
            if (!empty) continue;
            if (m_.mode() == RateMode::IndicatorAny) return 1.0;
            r += clauses[q].weight;
        }
        return r;
    }

    void checkGuard(const Guard& g) const {
        for (const Site& s : g.empty)
            if (std::find(g.occupied.begin(), g.occupied.end(), s) != g.occupied.end())
                throw ArgumentError("ill-formed guards: site " + s.str() + " required both empty and occupied");
    }

    int matchBranch(const std::vector<std::uint8_t>& st) const {
        for (std::size_t b = 0; b < p_.branches.size(); ++b) {
            const Guard& g = p_.branches[b].guard;
            bool ok = true;
            for (const Site& s : g.empty) ok = ok && st[L_.find(s)] == 0;
            for (const Site& s : g.occupied) ok = ok && st[L_.find(s)] == 1;
            if (ok) return static_cast<int>(b);
        }
        return -1;
    }

    std::string describe(const std::vector<std::uint8_t>& st) const {
        std::string out = "empty {";
        bool first = true;
        for (std::size_t k = 0; k < st.size(); ++k)
            if (!st[k] && (!ctx_.reservoir || static_cast<int>(k) < nBox_)) {
                out += (first ? "" : ",") + L_.sites[k].str();
                first = false;
            }
        return out + "}";
    }

    void fail(MoveReport& rep, std::size_t t, const CStep& c, const std::vector<std::uint8_t>& init, const char* why) {
        if (rep.valid) {
            rep.witness = std::string(why) + " at t=" + std::to_string(t) + " step " + c.step.str() + " for " +
                          describe(init);
            rep.witnessStep = static_cast<int>(t);
        }
        rep.valid = false;
    }

    void countKey(std::size_t t, const std::vector<std::uint8_t>& st, const std::string& step) {
        if (keyCounts_.size() <= t) keyCounts_.resize(t + 1);
        std::string key;
        const int upto = ctx_.reservoir ? nBox_ : static_cast<int>(st.size());
        key.reserve(upto + step.size());
        for (int k = 0; k < upto; ++k) key.push_back(static_cast<char>('0' + st[k]));
        key += step;
        ++keyCounts_[t][key];
    }

    int vacancies(const std::vector<std::uint8_t>& st) const {
        const int upto = ctx_.reservoir ? nBox_ : static_cast<int>(st.size());
        int v = 0;
        for (int k = 0; k < upto; ++k) v += st[k] == 0;
        return v;
    }

    void runOne(std::vector<std::uint8_t>& st, std::size_t b, MoveReport& rep) {
        ++rep.configsChecked;
        const std::vector<std::uint8_t> init = st;
        const int vac0 = vacancies(st);
        int z = -1, z0 = -1;
        if (ctx_.tracer) {
            rep.tracerChecked = true;
            z = z0 = L_.find(*ctx_.tracer);
            if (st[z] != 1) throw ArgumentError("tracer site must be occupied on the domain");
        }
        std::map<Site, int> touches;
        std::size_t tp = 0;
        const auto& prog = steps_[b];
        for (std::size_t t = 0; t < prog.size(); ++t) {
            const CStep& c = prog[t];
            if (c.flip) {
                if (!(c.iIn && dom_.onBoundary(c.step.x))) {
                    fail(rep, t, c, init, "boundary flip off the boundary");
                    return;
                }
                if (lossTracking_) countKey(tp, st, c.step.str());
                ++tp;
                st[c.i] ^= 1;
                ++touches[c.step.x];
                foot_.insert(c.step.x);
            } else if (ctx_.reservoir) {
                if (rate(c, st, false) < 1.0 - 1e-12) rep.extendedValid = false;
                if (c.iIn && c.jIn) {
                    if (rate(c, st, true) < 1.0 - 1e-12) {
                        fail(rep, t, c, init, "constraint violated");
                        return;
                    }
                    if (st[c.i] && st[c.j]) ++rep.occupiedPairSteps;
                    if (lossTracking_) countKey(tp, st, c.step.str());
                    ++tp;
                    ++touches[c.step.x];
                    ++touches[c.step.other()];
                    foot_.insert(c.step.x);
                    foot_.insert(c.step.other());
                } else if (c.iIn != c.jIn && st[c.i] != st[c.j]) {
                    const Site s = c.iIn ? c.step.x : c.step.other();
                    if (lossTracking_) countKey(tp, st, MoveStep::boundaryFlip(s).str());
                    ++tp;
                    ++touches[s];
                    foot_.insert(s);
                }
                std::swap(st[c.i], st[c.j]);
            } else {
                if (rate(c, st, false) < 1.0 - 1e-12) {
                    fail(rep, t, c, init, "constraint violated");
                    return;
                }
                if (st[c.i] && st[c.j]) ++rep.occupiedPairSteps;
                if (z >= 0 && (z == c.i || z == c.j)) {
                    const int other = z == c.i ? c.j : c.i;
                    if (st[other] != 0) {
                        if (rep.tracerOk)
                            rep.witness = "tracer jumps onto an occupied site at t=" + std::to_string(t) + " step " +
                                          c.step.str() + " for " + describe(init);
                        rep.tracerOk = false;
                    } else {
                        z = other;
                    }
                }
                if (lossTracking_) countKey(t, st, c.step.str());
                ++touches[c.step.x];
                ++touches[c.step.other()];
                foot_.insert(c.step.x);
                foot_.insert(c.step.other());
                std::swap(st[c.i], st[c.j]);
                ++tp;
            }
            rep.energyBarrier = std::max(rep.energyBarrier, vacancies(st) - vac0);
        }
        rep.T = std::max(rep.T, tp);
        for (const auto& kv : touches) {
            auto& slot = touch_[kv.first];
            slot = std::max(slot, kv.second);
        }
        if (z >= 0) addUnique(rep.tracerDisplacements, L_.sites[z] - L_.sites[z0]);
        if (ctx_.reservoir) {
            if (ctx_.finalCheck) {
                Configuration a(dom_, 1), f(dom_, 1);
                for (int k = 0; k < nBox_; ++k) {
                    a.setIndex(k, init[k]);
                    f.setIndex(k, st[k]);
                }
                if (!ctx_.finalCheck(a, f)) {
                    if (rep.finalCheckFailures == 0 && rep.valid)
                        rep.witness = "final configuration mismatch for " + describe(init);
                    ++rep.finalCheckFailures;
                }
            }
        } else {
            const FinitePermutation& s = rep.permutations[b];
            for (std::size_t k = 0; k < st.size(); ++k) {
                int from = L_.find(s.preimage(L_.sites[k]));
                if (from < 0 || st[k] != init[from]) rep.permutationConsistent = false;
            }
        }
    }

    const MoveProgram& p_;
    const MoveContext& ctx_;
    const ConstraintModel& m_;
    bool hasWindow_ = false;
    Domain dom_;
    int nBox_ = 0;
    LocalSites L_;
    std::vector<std::vector<CStep>> steps_;
    std::vector<std::int8_t> fixed_;
    bool lossTracking_ = false;
    std::vector<std::unordered_map<std::string, std::uint32_t>> keyCounts_;
    std::map<Site, int> touch_;
    std::set<Site> foot_;
};

json siteJson(const Site& s) { return s.coords(); }

} // namespace

MoveReport validate(const MoveProgram& p, const MoveContext& ctx, ValidationMode mode) {
    if (!ctx.model) throw ArgumentError("validate: context has no model");
    if (ctx.model->dim() != p.dim) throw ArgumentError("validate: dimension mismatch");
    if (p.branches.empty()) throw ArgumentError("validate: program has no branches");
    Engine eng(p, ctx);
    return eng.run(mode);
}

std::string MoveReport::toJson() const {
    json j;
    j["valid"] = valid;
    j["mode"] = mode == ValidationMode::Exhaustive ? "exhaustive" : mode == ValidationMode::WorstCase ? "worstCase" : "sampled";
    j["T"] = T;
    j["loss"] = loss;
    j["maxCollisions"] = maxCollisions;
    j["energyBarrier"] = energyBarrier;
    json perms = json::array();
    for (const auto& p : permutations) perms.push_back(p.str());
    j["permutations"] = perms;
    j["touchMax"] = touchMax;
    j["footprintSize"] = footprint.size();
    j["configsChecked"] = configsChecked;
    j["permutationConsistent"] = permutationConsistent;
    j["occupiedPairSteps"] = occupiedPairSteps;
    if (!witness.empty()) j["witness"] = witness;
    if (tracerChecked) {
        j["tracerOk"] = tracerOk;
        json disp = json::array();
        for (const Site& s : tracerDisplacements) disp.push_back(siteJson(s));
        j["tracerDisplacements"] = disp;
    }
    if (!extendedValid) j["extendedValid"] = false;
    if (finalCheckFailures) j["finalCheckFailures"] = finalCheckFailures;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- certificates

MoveProgram translationMove(const MobileClusterCertificate& cert, const Site& x, Direction e) {
    MoveProgram p = cert.translation(e).translated(x);
    p.name = "Tr" + e.str() + "(" + x.str() + "+C)";
    return p;
}

MoveProgram exchangeMove(const MobileClusterCertificate& cert, const Site& x, Direction e) {
    MoveProgram p = cert.exchange(e).translated(x);
    p.name = "Ex" + e.str() + "(" + x.str() + "+C)";
    return p;
}

SearchResult searchTranslation(const ConstraintModel& m, const std::vector<Site>& C, int l, Direction e,
                               std::uint64_t budget) {
    const int d = m.dim();
    if (C.empty()) throw ArgumentError("searchTranslation: empty cluster");
    const Box win = Box::cube(d, -l, l);
    const std::vector<Site> start = sortedSet(C);
    std::vector<Site> goal;
    for (const Site& c : start) goal.push_back(c + e.unit(d));
    goal = sortedSet(goal);
    if (goal == start) throw ArgumentError("searchTranslation: degenerate goal");
    for (const Site& s : start)
        if (!win.contains(s) || !win.contains(s + e.unit(d)))
            throw ArgumentError("searchTranslation: cluster and its translate must lie in [-l,l]^d");

    const Domain wd(std::vector<int>(d, 2 * l + 1), Boundary::Occupied);
    Site shift(d);
    for (int a = 0; a < d; ++a) shift[a] = l + 1;
    auto toIdx = [&](const Site& s) { return static_cast<std::uint16_t>(wd.index(s + shift)); };
    auto toSite = [&](int i) { return wd.site(i) - shift; };
    auto key = [](const std::vector<std::uint16_t>& v) {
        return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::uint16_t));
    };
    std::vector<std::uint16_t> s0, g0;
    for (const Site& s : start) s0.push_back(toIdx(s));
    for (const Site& s : goal) g0.push_back(toIdx(s));
    std::sort(s0.begin(), s0.end());
    std::sort(g0.begin(), g0.end());
    const std::string goalKey = key(g0);

    struct Node {
        std::string parent;
        MoveStep step;
    };
    std::unordered_map<std::string, Node> seen;
    std::deque<std::vector<std::uint16_t>> queue;
    seen.emplace(key(s0), Node{"", {}});
    queue.push_back(s0);
    std::vector<std::uint8_t> occ(wd.size(), 1);
    SearchResult res;
    while (!queue.empty()) {
        std::vector<std::uint16_t> cur = std::move(queue.front());
        queue.pop_front();
        if (++res.explored > budget) {
            res.status = SearchResult::Status::BudgetExceeded;
            return res;
        }
        const std::string curKey = key(cur);
        for (auto v : cur) occ[v] = 0;
        for (std::size_t vi = 0; vi < cur.size(); ++vi) {
            const Site sv = toSite(cur[vi]);
            for (int di = 0; di < 2 * d; ++di) {
                const Direction dr = Direction::fromIndex(di);
                const Site w = sv + dr.unit(d);
                if (!win.contains(w)) continue;
                const auto iw = toIdx(w);
                if (!occ[iw]) continue;
                const Site lower = dr.sign > 0 ? sv : w;
                double r = m.rate(dr.axis, [&](const Site& o) {
                    const Site s = lower + o;
                    return win.contains(s) ? static_cast<int>(occ[toIdx(s)]) : 1;
                });
                if (r < 1.0 - 1e-12) continue;
                std::vector<std::uint16_t> nxt = cur;
                nxt[vi] = iw;
                std::sort(nxt.begin(), nxt.end());
                std::string k = key(nxt);
                if (seen.count(k)) continue;
                seen.emplace(k, Node{curKey, MoveStep::exchange(lower, Direction{dr.axis, 1})});
                if (k == goalKey) {
                    std::vector<MoveStep> steps;
                    const std::string startKey = key(s0);
                    for (std::string at = k; at != startKey;) {
                        const Node& nd = seen.at(at);
                        steps.push_back(nd.step);
                        at = nd.parent;
                    }
                    std::reverse(steps.begin(), steps.end());
                    res.status = SearchResult::Status::Found;
                    res.program = MoveProgram::fromSteps("Tr" + e.str(), d, steps, Guard{start, {}});
                    return res;
                }
                queue.push_back(std::move(nxt));
            }
        }
        for (auto v : cur) occ[v] = 1;
    }
    res.status = SearchResult::Status::NotFound;
    return res;
}

namespace {

struct RouteOpts {
    std::set<Site> pathAvoid;    // sites no translation on the route may touch
    std::set<Site> actionAvoid;  // sites the final action may not touch
    std::function<bool(const Site&)> allowed;
    int radius = 12;
    std::size_t maxNodes = 200000;
};

using Action = std::function<std::optional<std::vector<MoveStep>>(const Site& x)>;

bool footprintOk(const std::set<Site>& fp, const std::set<Site>& avoid, const std::function<bool(const Site&)>& allowed) {
    for (const Site& s : fp) {
        if (avoid.count(s)) return false;
        if (allowed && !allowed(s)) return false;
    }
    return true;
}

// Breadth-first search over cluster offsets; returns path steps followed by action steps.
std::optional<std::pair<std::vector<MoveStep>, std::vector<MoveStep>>>
routeBfs(const MobileClusterCertificate& cert, const Site& from, const RouteOpts& opts, const Action& action) {
    const int d = cert.dim;
    std::vector<std::set<Site>> baseFp(2 * d);
    for (int di = 0; di < 2 * d; ++di) baseFp[di] = cert.tr.at(di).touchedSites();
    struct Node {
        Site parent;
        int dir;
    };
    std::map<Site, Node> seen;
    std::deque<Site> queue{from};
    seen.emplace(from, Node{from, -1});
    while (!queue.empty()) {
        const Site x = queue.front();
        queue.pop_front();
        if (auto act = action(x)) {
            std::vector<Site> chain;
            for (Site at = x; !(at == from); at = seen.at(at).parent) chain.push_back(at);
            std::reverse(chain.begin(), chain.end());
            std::vector<MoveStep> path;
            Site pos = from;
            for (const Site& nx : chain) {
                const Direction dir = Direction::fromIndex(seen.at(nx).dir);
                for (const MoveStep& st : cert.tr.at(dir.index()).steps()) path.push_back(st.translated(pos));
                pos = nx;
            }
            return std::make_pair(path, *act);
        }
        if (seen.size() > opts.maxNodes) break;
        for (int di = 0; di < 2 * d; ++di) {
            const Direction dir = Direction::fromIndex(di);
            const Site nx = x + dir.unit(d);
            if (seen.count(nx)) continue;
            bool inRadius = true;
            for (int a = 0; a < d; ++a) inRadius = inRadius && std::abs(nx[a] - from[a]) <= opts.radius;
            if (!inRadius) continue;
            std::set<Site> fp;
            for (const Site& s : baseFp[di]) fp.insert(s + x);
            if (!footprintOk(fp, opts.pathAvoid, opts.allowed)) continue;
            seen.emplace(nx, Node{x, di});
            queue.push_back(nx);
        }
    }
    return std::nullopt;
}

std::vector<MoveStep> withRollback(const std::vector<MoveStep>& path, const std::vector<MoveStep>& action) {
    std::vector<MoveStep> out = path;
    out.insert(out.end(), action.begin(), action.end());
    out.insert(out.end(), path.rbegin(), path.rend());
    return out;
}

std::vector<Site> shifted(const std::vector<Site>& v, const Site& z) {
    std::vector<Site> out;
    for (const Site& s : v) out.push_back(s + z);
    return out;
}

std::optional<MoveProgram> exchangeViaImpl(const ConstraintModel& m, const MobileClusterCertificate& cert,
                                           const Site& home, const Site& a, const Site& b,
                                           const std::set<Site>& avoid, RouteOpts opts, bool useEx) {
    const int d = m.dim();
    const Site diff = b - a;
    int axis = -1;
    for (int k = 0; k < d; ++k)
        if (std::abs(diff[k]) == 1 && diff.dot(diff) == 1) axis = k;
    if (axis < 0) throw ArgumentError("exchange sites " + a.str() + " and " + b.str() + " are not adjacent");
    const Site lower = diff[axis] > 0 ? a : b;
    opts.pathAvoid = avoid;
    opts.pathAvoid.insert(a);
    opts.pathAvoid.insert(b);
    opts.actionAvoid = avoid;
    opts.actionAvoid.erase(a);
    opts.actionAvoid.erase(b);
    const std::set<Site> ab{a, b};
    Action act = [&](const Site& x) -> std::optional<std::vector<MoveStep>> {
        const std::vector<Site> X = shifted(cert.cluster, x);
        auto inX = [&](const Site& s) { return std::find(X.begin(), X.end(), s) != X.end(); };
        if (!inX(a) && !inX(b)) {
            double r = m.rate(axis, [&](const Site& o) { return inX(lower + o) ? 0 : 1; });
            if (r >= 1.0 - 1e-12) return std::vector<MoveStep>{MoveStep::exchange(lower, Direction{axis, 1})};
        }
        if (useEx)
            for (int di = 0; di < 2 * d; ++di) {
                const Direction dir = Direction::fromIndex(di);
                const std::set<Site> pair{x + dir.unit(d) * cert.l, x + dir.unit(d) * (cert.l + 1)};
                if (pair != ab) continue;
                MoveProgram ex = exchangeMove(cert, x, dir);
                if (footprintOk(ex.touchedSites(), opts.actionAvoid, opts.allowed)) return ex.steps();
            }
        return std::nullopt;
    };
    auto found = routeBfs(cert, home, opts, act);
    if (!found) return std::nullopt;
    return MoveProgram::fromSteps("X(" + a.str() + "," + b.str() + ")", d, withRollback(found->first, found->second),
                                  Guard{shifted(cert.cluster, home), {}});
}

bool validWorstCase(const MoveProgram& p, const ConstraintModel& m, std::optional<Site> tracer = std::nullopt) {
    MoveContext ctx;
    ctx.model = &m;
    ctx.tracer = tracer;
    MoveReport r = validate(p, ctx, ValidationMode::WorstCase);
    return r.valid && r.tracerOk && r.permutationConsistent;
}

} // namespace

std::optional<MoveProgram> exchangeViaCluster(const ConstraintModel& m, const MobileClusterCertificate& cert,
                                              const Site& home, const Site& a, const Site& b,
                                              const std::set<Site>& avoid, int radius) {
    RouteOpts opts;
    opts.radius = radius;
    return exchangeViaImpl(m, cert, home, a, b, avoid, opts, !cert.ex.empty());
}

std::optional<MoveProgram> routeCluster(const MobileClusterCertificate& cert, const Site& from, const Site& to,
                                        const std::set<Site>& avoid, int radius) {
    RouteOpts opts;
    opts.radius = radius;
    opts.pathAvoid = avoid;
    Action act = [&](const Site& x) -> std::optional<std::vector<MoveStep>> {
        if (x == to) return std::vector<MoveStep>{};
        return std::nullopt;
    };
    auto found = routeBfs(cert, from, opts, act);
    if (!found) return std::nullopt;
    return MoveProgram::fromSteps("Route(" + from.str() + "->" + to.str() + ")", cert.dim, found->first,
                                  Guard{shifted(cert.cluster, from), {}});
}

std::optional<MoveProgram> exchangeFromTranslation(const ConstraintModel& m, const std::vector<MoveProgram>& trPrograms,
                                                   const std::vector<Site>& C, int l, Direction e) {
    if (m.mode() == RateMode::Custom) throw ArgumentError("exchangeFromTranslation needs a clause model");
    const int d = m.dim();
    MobileClusterCertificate tmp;
    tmp.dim = d;
    tmp.cluster = C;
    tmp.l = l;
    tmp.tr = trPrograms;
    const Site a = e.unit(d) * l, b = e.unit(d) * (l + 1);
    const Box win = Box::cube(d, -l, l);
    RouteOpts opts;
    opts.radius = 2 * l;
    opts.allowed = [&](const Site& s) { return win.contains(s) || s == b; };
    auto p = exchangeViaImpl(m, tmp, Site(d), a, b, {}, opts, false);
    if (!p) return std::nullopt;
    p->name = "Ex" + e.str();
    p->extraSites = {b};
    p->fitWindow();
    if (!validWorstCase(*p, m)) return std::nullopt;
    if (!(p->permutation() == FinitePermutation::transposition(a, b))) return std::nullopt;
    return p;
}

void checkCertificate(MobileClusterCertificate& cert, const ConstraintModel& m) {
    const int d = cert.dim;
    if (static_cast<int>(cert.tr.size()) != 2 * d || static_cast<int>(cert.ex.size()) != 2 * d)
        throw ValidationError("certificate needs Tr and Ex programs for all 2d directions");
    cert.trReports.clear();
    cert.exReports.clear();
    cert.trPointwise.clear();
    MoveContext ctx;
    ctx.model = &m;
    const std::vector<Site> C = sortedSet(cert.cluster);
    for (int di = 0; di < 2 * d; ++di) {
        const Direction e = Direction::fromIndex(di);
        ctx.window = Box::cube(d, -cert.l, cert.l);
        MoveReport tr = validate(cert.tr[di], ctx, ValidationMode::WorstCase);
        if (!tr.valid) throw ValidationError("Tr" + e.str() + " invalid: " + tr.witness);
        const FinitePermutation s = cert.tr[di].permutation();
        std::vector<Site> img, target;
        bool pointwise = true;
        for (const Site& c : C) {
            img.push_back(s(c));
            target.push_back(c + e.unit(d));
            pointwise = pointwise && s(c) == c + e.unit(d);
        }
        if (sortedSet(img) != sortedSet(target)) throw ValidationError("Tr" + e.str() + " does not map C onto C+e");
        cert.trReports.push_back(tr);
        cert.trPointwise.push_back(pointwise);

        const Site a = e.unit(d) * cert.l, b = e.unit(d) * (cert.l + 1);
        ctx.window = Box::cube(d, -cert.l, cert.l).hull(b);
        MoveReport ex = validate(cert.ex[di], ctx, ValidationMode::WorstCase);
        if (!ex.valid) throw ValidationError("Ex" + e.str() + " invalid: " + ex.witness);
        if (!(cert.ex[di].permutation() == FinitePermutation::transposition(a, b)))
            throw ValidationError("Ex" + e.str() + " permutation is " + cert.ex[di].permutation().str());
        cert.exReports.push_back(ex);
    }
}

CertifyResult certify(const ConstraintModel& m, const std::vector<Site>& C, int l, std::uint64_t budget) {
    const int d = m.dim();
    CertifyResult out;
    MobileClusterCertificate cert;
    cert.modelName = m.name();
    if (m.mode() != RateMode::Custom) cert.modelHash = m.hash();
    cert.dim = d;
    cert.cluster = sortedSet(C);
    cert.l = l;
    for (int di = 0; di < 2 * d; ++di) {
        const Direction e = Direction::fromIndex(di);
        SearchResult sr = searchTranslation(m, cert.cluster, l, e, budget);
        if (sr.status == SearchResult::Status::BudgetExceeded) {
            out.failure = "unknown: translation search for " + e.str() + " exceeded the budget";
            return out;
        }
        if (sr.status == SearchResult::Status::NotFound) {
            out.failure = "no translation move for " + e.str() + " within [-l,l]^d";
            return out;
        }
        cert.tr.push_back(*sr.program);
    }
    for (int di = 0; di < 2 * d; ++di) {
        const Direction e = Direction::fromIndex(di);
        auto ex = exchangeFromTranslation(m, cert.tr, cert.cluster, l, e);
        if (!ex) {
            out.failure = "exchange recipe failed for " + e.str();
            return out;
        }
        cert.ex.push_back(*ex);
    }
    checkCertificate(cert, m);
    out.certificate = std::move(cert);
    return out;
}

// ---------------------------------------------------------------- library moves

MobileClusterCertificate bt1dCertificate() {
    const ConstraintModel m = bt1d();
    MobileClusterCertificate cert;
    cert.modelName = m.name();
    cert.modelHash = m.hash();
    cert.dim = 1;
    cert.cluster = {Site{1}, Site{2}};
    cert.l = 3;
    const Direction R{0, 1}, Lt{0, -1};
    MoveProgram tr1 = MoveProgram::fromSteps("Tr+1", 1, {MoveStep::exchange(Site{2}, R), MoveStep::exchange(Site{1}, R)},
                                             Guard{cert.cluster, {}});
    MoveProgram trm1 = inverse(tr1.translated(Site{-1}));
    trm1.name = "Tr-1";
    cert.tr = {tr1, trm1};
    MoveProgram ex1 = MoveProgram::fromSteps("Ex+1", 1, {MoveStep::exchange(Site{3}, R)}, Guard{cert.cluster, {}});
    ex1.extraSites = {Site{4}};
    ex1.fitWindow();
    cert.ex = {ex1, ex1};
    cert.ex[1] = bt1dExMinus1Composition(cert);
    (void)Lt;
    checkCertificate(cert, m);
    return cert;
}

MoveProgram bt1dExMinus1Composition(const MobileClusterCertificate& cert) {
    const Direction R{0, 1}, Lt{0, -1};
    MoveProgram p = MoveProgram::identity(1);
    p.domain = Guard{cert.cluster, {}};
    std::vector<MoveProgram> out;
    for (int k = 0; k <= 4; ++k) out.push_back(translationMove(cert, Site{-k}, Lt));
    for (const MoveProgram& t : out) p = compose(p, t);
    p = compose(p, exchangeMove(cert, Site{-5}, R));
    for (int k = 4; k >= 0; --k) p = compose(p, inverse(translationMove(cert, Site{-k}, Lt)));
    p.name = "Ex-1";
    p.extraSites = {Site{-4}};
    p.fitWindow();
    return p;
}

MoveProgram bt2dTr2Figure() {
    const Direction up{1, 1};
    std::vector<MoveStep> steps{MoveStep::exchange(Site{1, 2}, up), MoveStep::exchange(Site{1, 1}, up),
                                MoveStep::exchange(Site{2, 2}, up), MoveStep::exchange(Site{2, 1}, up)};
    return MoveProgram::fromSteps("Tr+2", 2, steps, Guard{{Site{1, 1}, Site{1, 2}, Site{2, 1}, Site{2, 2}}, {}});
}

MobileClusterCertificate bt2dCertificate() {
    const ConstraintModel m = bt2d();
    CertifyResult r = certify(m, {Site{1, 1}, Site{1, 2}, Site{2, 1}, Site{2, 2}}, 3);
    if (!r.certificate) throw ValidationError("bt2d certification failed: " + r.failure);
    MobileClusterCertificate cert = *r.certificate;
    cert.tr[Direction{1, 1}.index()] = bt2dTr2Figure();
    checkCertificate(cert, m);
    return cert;
}

MoveProgram flipMove(const ConstraintModel& m, const MobileClusterCertificate& cert, const Site& z, int L) {
    const int d = m.dim();
    const Box box = Box::cube(d, 1, L);
    if (!box.contains(z)) throw ArgumentError("flipMove: z outside the box");
    Site zbar = z;
    zbar[0] = 0;
    const Direction e1{0, 1};
    const Site u = e1.unit(d);
    const int n = z[0];
    auto y = [&](int j) { return zbar - u * cert.l + u * j; };
    std::vector<MoveStep> fwd;
    auto append = [&](const MoveProgram& p) {
        for (const MoveStep& st : p.steps()) fwd.push_back(st);
    };
    for (int j = 0; j + 1 < n; ++j) {
        append(exchangeMove(cert, y(j), e1));
        append(translationMove(cert, y(j), e1));
    }
    std::vector<MoveStep> steps = fwd;
    const MoveProgram last = exchangeMove(cert, y(n - 1), e1);
    steps.insert(steps.end(), last.steps().begin(), last.steps().end());
    steps.insert(steps.end(), fwd.rbegin(), fwd.rend());

    MoveProgram p = MoveProgram::fromSteps("Flip" + z.str(), d, steps, Guard{});
    p.ghosts.push_back(Ghost{zbar, Ghost::Init::ComplementOf, z});
    for (const Site& c : cert.cluster) p.ghosts.push_back(Ghost{y(0) + c, Ghost::Init::Empty, Site(d)});
    for (const Ghost& g : p.ghosts)
        if (box.contains(g.site)) throw ValidationError("flipMove: ghost site inside the box");
    if (!(p.permutation() == FinitePermutation::transposition(zbar, z)))
        throw ValidationError("flipMove: permutation is " + p.permutation().str());
    return p;
}

std::vector<Site> hatCluster(const MobileClusterCertificate& cert) {
    const int d = cert.dim;
    std::vector<Site> out{-Site::unit(d, 0)};
    for (const Site& c : cert.cluster) out.push_back(Site::unit(d, 0) * (cert.l + 2) + c);
    return out;
}

namespace {

class Builder {
public:
    Builder(const ConstraintModel& m, const MobileClusterCertificate& cert, Site home)
        : m_(m), cert_(cert), pos_(std::move(home)) {}

    void exchange(const Site& a, const Site& b, const std::set<Site>& avoid) {
        auto p = exchangeViaCluster(m_, cert_, pos_, a, b, avoid);
        if (!p) throw ValidationError("no cluster route exchanges " + a.str() + " and " + b.str());
        append(*p);
    }
    void moveTo(const Site& to, const std::set<Site>& avoid) {
        auto p = routeCluster(cert_, pos_, to, avoid);
        if (!p) throw ValidationError("no cluster route from " + pos_.str() + " to " + to.str());
        append(*p);
        pos_ = to;
    }
    void append(const MoveProgram& p) {
        for (const MoveStep& st : p.steps()) steps_.push_back(st);
    }
    const std::vector<MoveStep>& steps() const { return steps_; }

private:
    const ConstraintModel& m_;
    const MobileClusterCertificate& cert_;
    Site pos_;
    std::vector<MoveStep> steps_;
};

Guard hatDomain(const MobileClusterCertificate& cert) { return Guard{hatCluster(cert), {Site(cert.dim)}}; }

void hopRing(Builder& b, const std::vector<Site>& ring) {
    std::set<Site> avoid(ring.begin(), ring.end());
    avoid.insert(Site(ring[0].dim));
    for (std::size_t k = 0; k + 1 < ring.size(); ++k) b.exchange(ring[k], ring[k + 1], avoid);
}

} // namespace

MoveProgram hopMove(const ConstraintModel& m, const MobileClusterCertificate& cert) {
    const int d = cert.dim;
    if (d < 2) throw ArgumentError("hopMove needs d >= 2");
    const Site e1 = Site::unit(d, 0), e2 = Site::unit(d, 1);
    Builder b(m, cert, e1 * (cert.l + 2));
    hopRing(b, {-e1, -e1 + e2, e2, e1 + e2, e1});
    MoveProgram p = MoveProgram::fromSteps("Hop", d, b.steps(), hatDomain(cert));
    const FinitePermutation sH = FinitePermutation::cycle({e1, e1 + e2, e2, -e1 + e2, -e1});
    if (!(p.permutation() == sH)) throw ValidationError("Hop permutation is " + p.permutation().str());
    return p;
}

MoveProgram sigmaMove(const ConstraintModel& m, const MobileClusterCertificate& cert, int axis) {
    const int d = cert.dim;
    if (d < 2) throw ArgumentError("sigmaMove needs d >= 2");
    if (axis < 0 || axis >= d) throw ArgumentError("sigmaMove: axis out of range");
    const int l = cert.l;
    const Site e1 = Site::unit(d, 0);
    const Site origin(d);
    MoveProgram p;
    if (axis == 0) {
        const Direction R{0, 1}, Lt{0, -1};
        std::vector<MoveStep> steps = hopMove(m, cert).steps();
        for (const MoveProgram& q : {translationMove(cert, e1 * (l + 2), Lt), exchangeMove(cert, e1 * (l + 1), Lt),
                                     translationMove(cert, e1 * (l + 1), R), translationMove(cert, e1 * (l + 2), R)})
            steps.insert(steps.end(), q.steps().begin(), q.steps().end());
        p = MoveProgram::fromSteps("Sigma+1", d, steps, hatDomain(cert));
        if (!validWorstCase(p, m, origin)) {
            // route the tracer jump through a cluster path that avoids the tracer instead
            Builder b(m, cert, e1 * (l + 2));
            b.append(hopMove(m, cert));
            b.exchange(origin, e1, {});
            b.moveTo(e1 * (l + 3), {e1, origin});
            p = MoveProgram::fromSteps("Sigma+1", d, b.steps(), hatDomain(cert));
        }
    } else {
        const Site ea = Site::unit(d, axis);
        Builder b(m, cert, e1 * (l + 2));
        const std::set<Site> keep{origin, -e1, -e1 - ea, -ea};
        b.exchange(-e1, -e1 - ea, keep);
        b.exchange(-e1 - ea, -ea, keep);
        b.moveTo(ea * (l + 2), {origin, -ea});
        hopRing(b, {-ea, -ea + e1, e1, ea + e1, ea});
        b.exchange(origin, ea, {});
        const std::set<Site> keep2{ea, origin, -e1, ea - e1};
        b.exchange(origin, -e1, keep2);
        b.exchange(-e1, ea - e1, keep2);
        b.moveTo(e1 * (l + 2) + ea, {ea, ea - e1});
        p = MoveProgram::fromSteps("Sigma+" + std::to_string(axis + 1), d, b.steps(), hatDomain(cert));
    }
    const FinitePermutation s = p.permutation();
    const Site ea = Site::unit(d, axis);
    if (!(s(origin) == ea)) throw ValidationError("sigma move does not carry the tracer to e_alpha");
    std::vector<Site> img, target;
    for (const Site& h : hatCluster(cert)) {
        img.push_back(s(h));
        target.push_back(h + ea);
    }
    if (sortedSet(img) != sortedSet(target)) throw ValidationError("sigma move does not carry the hat cluster");
    return p;
}

std::vector<Site> defaultAuxSet(const MobileClusterCertificate& cert, int axis) {
    std::vector<Site> A = cert.cluster;
    for (const Site& c : cert.cluster) A.push_back(Site::unit(cert.dim, axis) * cert.l + c);
    return orderAuxSet(A, axis);
}

MoveProgram auxMove(const ConstraintModel& m, const MobileClusterCertificate& cert, int axis, int i) {
    const int d = cert.dim;
    const std::vector<Site> A = defaultAuxSet(cert, axis);
    const int n = static_cast<int>(A.size());
    if (i < 0 || i >= n) throw ArgumentError("auxMove: i out of range");
    const Site ea = Site::unit(d, axis);
    const std::vector<Site> Ai = auxShifted(A, axis, i);
    std::vector<Site> F;
    for (const Site& s : Ai)
        if (!(s == A[i])) F.push_back(s - A[i]);
    const int nc = static_cast<int>(cert.cluster.size());
    const Site P = i < nc ? -A[i] : -A[i] + ea + ea * cert.l;
    for (const Site& c : cert.cluster)
        if (std::find(F.begin(), F.end(), P + c) == F.end())
            throw ValidationError("auxMove: cluster copy not inside the empty pattern");
    auto x = exchangeViaCluster(m, cert, P, Site(d), ea, {});
    if (!x) throw ValidationError("auxMove: no route exchanging 0 and e_alpha");
    MoveProgram p;
    p.name = "Aux" + std::to_string(axis + 1) + "[" + std::to_string(i) + "]";
    p.dim = d;
    p.branches.push_back({Guard{F, {}}, x->steps()});
    p.fitWindow();
    return p;
}

MoveProgram auxMoveUnion(const ConstraintModel& m, const MobileClusterCertificate& cert, int axis) {
    const int n = static_cast<int>(defaultAuxSet(cert, axis).size());
    MoveProgram p;
    p.name = "Aux" + std::to_string(axis + 1);
    p.dim = cert.dim;
    for (int i = 0; i < n; ++i) p.branches.push_back(auxMove(m, cert, axis, i).branches[0]);
    p.fitWindow();
    return p;
}

MoveProgram trivialAuxMove(const ConstraintModel& m, const ConstraintModel& aux, int axis) {
    if (aux.mode() == RateMode::Custom) throw ArgumentError("trivialAuxMove needs a clause model");
    MoveProgram p;
    p.name = "Aux" + std::to_string(axis + 1);
    p.dim = m.dim();
    for (const Clause& cl : aux.family(axis).clauses)
        p.branches.push_back({Guard{cl.offsets, {}}, {MoveStep::exchange(Site(m.dim()), Direction{axis, 1})}});
    p.fitWindow();
    return p;
}

// ---------------------------------------------------------------- serialization

namespace {

Site siteFrom(const json& j, int dim, const std::string& where) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        throw SpecError(where + ": expected an integer vector of length " + std::to_string(dim));
    std::vector<int> v;
    for (const auto& x : j) {
        if (!x.is_number_integer()) throw SpecError(where + ": coordinates must be integers");
        v.push_back(x.get<int>());
    }
    return Site::fromVector(v);
}

json sitesJson(const std::vector<Site>& v) {
    json a = json::array();
    for (const Site& s : v) a.push_back(siteJson(s));
    return a;
}

std::vector<Site> sitesFrom(const json& j, int dim, const std::string& where) {
    if (!j.is_array()) throw SpecError(where + ": expected a list of sites");
    std::vector<Site> out;
    for (const auto& x : j) out.push_back(siteFrom(x, dim, where));
    return out;
}

json guardJson(const Guard& g) { return json{{"empty", sitesJson(g.empty)}, {"occupied", sitesJson(g.occupied)}}; }

Guard guardFrom(const json& j, int dim, const std::string& where) {
    if (!j.is_object()) throw SpecError(where + ": expected an object");
    Guard g;
    if (j.contains("empty")) g.empty = sitesFrom(j.at("empty"), dim, where + ".empty");
    if (j.contains("occupied")) g.occupied = sitesFrom(j.at("occupied"), dim, where + ".occupied");
    return g;
}

const char* ghostInitName(Ghost::Init i) {
    switch (i) {
    case Ghost::Init::Empty: return "empty";
    case Ghost::Init::Occupied: return "occupied";
    case Ghost::Init::ComplementOf: return "complementOf";
    }
    return "occupied";
}

json moveJson(const MoveProgram& p) {
    json j;
    j["schema"] = "kclg.move/1";
    j["name"] = p.name;
    j["dim"] = p.dim;
    j["window"] = json{{"lo", siteJson(p.window.lo)}, {"hi", siteJson(p.window.hi)}};
    j["extraSites"] = sitesJson(p.extraSites);
    j["domain"] = guardJson(p.domain);
    json br = json::array();
    for (const Branch& b : p.branches) {
        json steps = json::array();
        for (const MoveStep& st : b.steps) {
            if (st.kind == MoveStep::Kind::Exchange)
                steps.push_back(json{{"kind", "exchange"}, {"x", siteJson(st.x)}, {"e", st.e.str()}});
            else
                steps.push_back(json{{"kind", "boundaryFlip"}, {"x", siteJson(st.x)}});
        }
        br.push_back(json{{"guard", guardJson(b.guard)}, {"steps", steps}});
    }
    j["branches"] = br;
    json gh = json::array();
    for (const Ghost& g : p.ghosts) {
        json o{{"site", siteJson(g.site)}, {"init", ghostInitName(g.init)}};
        if (g.init == Ghost::Init::ComplementOf) o["ref"] = siteJson(g.ref);
        gh.push_back(o);
    }
    j["ghosts"] = gh;
    return j;
}

MoveProgram moveFrom(const json& j) {
    if (!j.is_object()) throw SpecError("move spec must be a JSON object");
    if (j.value("schema", "") != "kclg.move/1") throw SpecError("move spec: unknown or missing schema");
    MoveProgram p;
    if (!j.contains("dim") || !j.at("dim").is_number_integer()) throw SpecError("move spec: missing field 'dim'");
    p.dim = j.at("dim").get<int>();
    if (p.dim < 1 || p.dim > kMaxDim) throw SpecError("move spec: dim out of range");
    p.name = j.value("name", "");
    if (!j.contains("window")) throw SpecError("move spec: missing field 'window'");
    p.window.lo = siteFrom(j.at("window").at("lo"), p.dim, "window.lo");
    p.window.hi = siteFrom(j.at("window").at("hi"), p.dim, "window.hi");
    if (j.contains("extraSites")) p.extraSites = sitesFrom(j.at("extraSites"), p.dim, "extraSites");
    if (j.contains("domain")) p.domain = guardFrom(j.at("domain"), p.dim, "domain");
    if (!j.contains("branches") || !j.at("branches").is_array()) throw SpecError("move spec: missing field 'branches'");
    for (const auto& b : j.at("branches")) {
        Branch br;
        if (b.contains("guard")) br.guard = guardFrom(b.at("guard"), p.dim, "branches.guard");
        if (!b.contains("steps") || !b.at("steps").is_array()) throw SpecError("move spec: branch without 'steps'");
        for (const auto& st : b.at("steps")) {
            const std::string kind = st.value("kind", "");
            const Site x = siteFrom(st.at("x"), p.dim, "steps.x");
            if (kind == "exchange") {
                Direction e;
                try {
                    e = Direction::parse(st.at("e").get<std::string>());
                } catch (const std::exception&) {
                    throw SpecError("move spec: bad direction in step");
                }
                if (e.axis >= p.dim) throw SpecError("move spec: direction axis out of range");
                br.steps.push_back(MoveStep::exchange(x, e));
            } else if (kind == "boundaryFlip") {
                br.steps.push_back(MoveStep::boundaryFlip(x));
            } else {
                throw SpecError("move spec: unknown step kind '" + kind + "'");
            }
        }
        p.branches.push_back(std::move(br));
    }
    if (j.contains("ghosts"))
        for (const auto& g : j.at("ghosts")) {
            Ghost gh;
            gh.site = siteFrom(g.at("site"), p.dim, "ghosts.site");
            const std::string init = g.value("init", "");
            if (init == "empty") gh.init = Ghost::Init::Empty;
            else if (init == "occupied") gh.init = Ghost::Init::Occupied;
            else if (init == "complementOf") {
                gh.init = Ghost::Init::ComplementOf;
                gh.ref = siteFrom(g.at("ref"), p.dim, "ghosts.ref");
            } else throw SpecError("move spec: unknown ghost init '" + init + "'");
            if (gh.init != Ghost::Init::ComplementOf) gh.ref = Site(p.dim);
            p.ghosts.push_back(gh);
        }
    return p;
}

json parseJson(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw SpecError(std::string(what) + ": invalid JSON (" + e.what() + ")");
    }
}

} // namespace

std::string moveToJson(const MoveProgram& p) { return moveJson(p).dump(2) + "\n"; }

MoveProgram moveFromJson(const std::string& text) {
    try {
        return moveFrom(parseJson(text, "move spec"));
    } catch (const json::exception& e) {
        throw SpecError(std::string("move spec: ") + e.what());
    }
}

std::string certificateToJson(const MobileClusterCertificate& cert, const ConstraintModel& m) {
    json j;
    j["schema"] = "kclg.certificate/1";
    j["model"] = json::parse(modelToJson(m));
    j["modelHash"] = m.hash();
    j["cluster"] = sitesJson(cert.cluster);
    j["l"] = cert.l;
    json tr = json::array(), ex = json::array();
    for (const auto& p : cert.tr) tr.push_back(moveJson(p));
    for (const auto& p : cert.ex) ex.push_back(moveJson(p));
    j["tr"] = tr;
    j["ex"] = ex;
    return j.dump(2) + "\n";
}

MobileClusterCertificate certificateFromJson(const std::string& text, ConstraintModel* modelOut) {
    const json j = parseJson(text, "certificate");
    try {
        if (j.value("schema", "") != "kclg.certificate/1") throw SpecError("certificate: unknown or missing schema");
        ConstraintModel m = modelFromJson(j.at("model").dump());
        if (j.value("modelHash", "") != m.hash()) throw SpecError("certificate: model hash mismatch");
        MobileClusterCertificate cert;
        cert.modelName = m.name();
        cert.modelHash = m.hash();
        cert.dim = m.dim();
        cert.cluster = sitesFrom(j.at("cluster"), cert.dim, "cluster");
        cert.l = j.at("l").get<int>();
        for (const auto& p : j.at("tr")) cert.tr.push_back(moveFrom(p));
        for (const auto& p : j.at("ex")) cert.ex.push_back(moveFrom(p));
        if (modelOut) *modelOut = m;
        return cert;
    } catch (const json::exception& e) {
        throw SpecError(std::string("certificate: ") + e.what());
    }
}

} // namespace kclg
