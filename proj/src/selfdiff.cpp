#include "kclg/selfdiff.hpp"

#include "kclg/error.hpp"
#include "kclg/util.hpp"
#include "window_enum.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

namespace kclg {

namespace {

std::vector<Site> sortedUnique(std::vector<Site> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

} // namespace

PermutationDynamics PermutationDynamics::kc(ConstraintModel m) {
    PermutationDynamics d;
    d.kind_ = Kind::Kc;
    d.dim_ = m.dim();
    d.model_ = std::move(m);
    return d;
}

PermutationDynamics PermutationDynamics::aux(int dim, std::vector<Site> hat, const std::vector<FinitePermutation>& sigmas) {
    if (static_cast<int>(sigmas.size()) != dim) throw ArgumentError("need one permutation per axis");
    PermutationDynamics d;
    d.kind_ = Kind::Aux;
    d.dim_ = dim;
    d.hat_ = sortedUnique(std::move(hat));
    const Site origin(dim);
    for (const Site& h : d.hat_)
        if (h == origin) throw ArgumentError("the hat cluster must not contain the origin");
    for (int a = 0; a < dim; ++a) {
        const Site e = Site::unit(dim, a);
        const FinitePermutation& s = sigmas[a];
        if (!(s(origin) == e)) throw ValidationError("sigma_" + std::to_string(a + 1) + " does not send 0 to e_alpha");
        std::vector<Site> img, target;
        for (const Site& h : d.hat_) {
            img.push_back(s(h));
            target.push_back(h + e);
        }
        if (sortedUnique(img) != sortedUnique(target))
            throw ValidationError("sigma_" + std::to_string(a + 1) + " does not carry the hat cluster");
        TracerGenerator g;
        g.name = "sigma+" + std::to_string(a + 1);
        g.sigma = s;
        g.jump = e;
        g.empty = d.hat_;
        d.family_.push_back(g);
    }
    for (int a = 0; a < dim; ++a) {
        TracerGenerator r = d.reversal(d.family_[a]);
        r.name = "sigma-" + std::to_string(a + 1);
        d.family_.push_back(r);
    }
    return d;
}

TracerGenerator PermutationDynamics::edgeGenerator(const Site& x, int axis) const {
    const Site y = x + Site::unit(dim_, axis);
    const Site origin(dim_);
    TracerGenerator g;
    g.name = "(" + x.str() + "," + y.str() + ")";
    g.sigma = FinitePermutation::transposition(x, y);
    g.jump = g.sigma(origin);
    g.edgeRate = true;
    g.edgeX = x;
    g.edgeAxis = axis;
    if (x == origin) g.empty = {y};
    if (y == origin) g.empty = {x};
    return g;
}

std::vector<TracerGenerator> PermutationDynamics::generators(const std::vector<Site>& near) const {
    if (kind_ == Kind::Aux) return family_;
    std::set<std::pair<Site, int>> edges;
    std::vector<Site> pts = near;
    pts.push_back(Site(dim_));
    for (const Site& s : pts)
        for (int a = 0; a < dim_; ++a) {
            edges.emplace(s, a);
            edges.emplace(s - Site::unit(dim_, a), a);
        }
    std::vector<TracerGenerator> out;
    for (const auto& [x, a] : edges) out.push_back(edgeGenerator(x, a));
    return out;
}

std::vector<TracerGenerator> PermutationDynamics::localGenerators() const {
    if (kind_ == Kind::Aux) return family_;
    std::vector<Site> ring;
    for (int a = 0; a < dim_; ++a) {
        ring.push_back(Site::unit(dim_, a));
        ring.push_back(-Site::unit(dim_, a));
    }
    return generators(ring);
}

TracerGenerator PermutationDynamics::reversal(const TracerGenerator& g) const {
    TracerGenerator r = g;
    r.sigma = g.sigma.inverse().conjugatedBy(-g.jump);
    r.jump = r.sigma(Site(dim_));
    if (kind_ == Kind::Kc) {
        const auto sup = r.sigma.support();
        if (sup.size() != 2) throw ValidationError("reversal of a transposition is not a transposition");
        const Site diff = sup[1] - sup[0];
        int axis = -1;
        for (int a = 0; a < dim_; ++a)
            if (diff == Site::unit(dim_, a)) axis = a;
        if (axis < 0) throw ValidationError("reversal is not a nearest-neighbour transposition");
        return edgeGenerator(sup[0], axis);
    }
    return r;
}

bool PermutationDynamics::contains(const TracerGenerator& g) const {
    if (kind_ == Kind::Aux) return std::find(family_.begin(), family_.end(), g) != family_.end();
    if (!g.edgeRate) return false;
    return edgeGenerator(g.edgeX, g.edgeAxis) == g;
}

std::vector<Site> PermutationDynamics::readSites(const TracerGenerator& g) const {
    std::vector<Site> out = g.empty;
    if (g.edgeRate)
        for (const Site& o : model_.support(g.edgeAxis)) out.push_back(g.edgeX + o);
    return sortedUnique(out);
}

Site environmentSource(const TracerGenerator& g, const Site& y) { return g.sigma.preimage(y + g.jump); }

PermutationDynamics kcTracerDynamics(const ConstraintModel& m) { return PermutationDynamics::kc(m); }

PermutationDynamics auxTracerDynamics(const ConstraintModel& m, const MobileClusterCertificate& cert) {
    if (cert.dim < 2) throw ArgumentError("the auxiliary tracer dynamics needs d >= 2");
    std::vector<FinitePermutation> sigmas;
    for (int a = 0; a < cert.dim; ++a) sigmas.push_back(sigmaMove(m, cert, a).permutation());
    return PermutationDynamics::aux(cert.dim, hatCluster(cert), sigmas);
}

ReversalReport checkReversal(const PermutationDynamics& dyn, std::uint64_t budget) {
    ReversalReport rep;
    const std::uint64_t limit = budget ? budget : defaultBudget();
    const Site origin(dyn.dim());
    for (const TracerGenerator& g : dyn.localGenerators()) {
        const TracerGenerator r = dyn.reversal(g);
        if (!dyn.contains(r) || !(dyn.reversal(r) == g)) {
            if (rep.structural) rep.witness = g.name + ": reversed generator missing";
            rep.structural = false;
            continue;
        }
        std::vector<Site> sites{origin};
        for (const Site& s : dyn.readSites(g)) sites.push_back(s);
        for (const Site& s : dyn.readSites(r)) sites.push_back(environmentSource(g, s));
        sites = sortedUnique(sites);
        std::map<Site, int> idx;
        for (std::size_t i = 0; i < sites.size(); ++i) idx.emplace(sites[i], static_cast<int>(i));
        const int free = static_cast<int>(sites.size()) - 1;
        if (free > 40 || (1ULL << free) > limit) throw BudgetError("reversal check window exceeds the budget");
        const std::uint64_t originBit = 1ULL << idx.at(origin);
        for (std::uint64_t k = 0; k < (1ULL << sites.size()); ++k) {
            if (!(k & originBit)) continue;
            auto occ = [&](const Site& s) { return static_cast<int>((k >> idx.at(s)) & 1U); };
            auto occNew = [&](const Site& s) { return occ(environmentSource(g, s)); };
            const double c = dyn.rate(g, occ), c2 = dyn.rate(r, occNew);
            ++rep.configsChecked;
            if (c != c2) {
                if (rep.detailedBalance) rep.witness = g.name + ": rate " + formatDouble(c) + " vs reversed " + formatDouble(c2);
                rep.detailedBalance = false;
            }
            if (c > 0 && !occNew(origin)) {
                if (rep.tracerOccupied) rep.witness = g.name + ": tracer lands on an empty site";
                rep.tracerOccupied = false;
            }
        }
    }
    return rep;
}

VariationalProblem selfDiffusionQP(const PermutationDynamics& dyn, const std::vector<double>& u,
                                   const std::vector<Site>& window, double q, const Estimator& est) {
    const int d = dyn.dim();
    if (static_cast<int>(u.size()) != d) throw ArgumentError("direction vector has wrong dimension");
    if (!(q > 0.0 && q <= 1.0)) throw ArgumentError("q must lie in (0,1]");
    const Site origin(d);
    std::vector<Site> win;
    for (const Site& s : window) {
        if (s.dim != d) throw ArgumentError("window site has wrong dimension");
        if (!(s == origin)) win.push_back(s);
    }
    if (sortedUnique(win).size() != win.size()) throw ArgumentError("duplicate window site");
    if (win.size() > 10) throw BudgetError("window has more than 10 sites");

    detail::IndicatorForm form(static_cast<int>(win.size()));
    std::size_t depSites = 0;
    for (const TracerGenerator& g : dyn.generators(win)) {
        double lin = 0.0;
        for (int a = 0; a < d; ++a) lin += u[a] * g.jump[a];
        std::vector<Site> src;
        bool moves = false;
        for (const Site& l : win) {
            src.push_back(environmentSource(g, l));
            moves = moves || !(src.back() == l);
        }
        if (lin == 0.0 && !moves) continue;

        std::vector<Site> sites;
        std::unordered_map<Site, int, SiteHash> index;
        auto add = [&](const Site& s) {
            auto [it, fresh] = index.emplace(s, static_cast<int>(sites.size()));
            if (fresh) sites.push_back(s);
            return it->second;
        };
        add(origin);
        std::vector<int> oldIdx, newIdx;
        for (const Site& l : win) oldIdx.push_back(add(l));
        for (const Site& s : src) newIdx.push_back(add(s));

        // rate as signed "all empty" terms; sites outside the window integrate to q each
        std::optional<std::vector<RateTerm>> terms;
        if (!g.edgeRate) {
            terms = std::vector<RateTerm>{{1.0, g.empty}};
        } else if (auto t = rateTerms(dyn.model(), g.edgeAxis)) {
            terms.emplace();
            for (RateTerm rt : *t) {
                for (Site& o : rt.empty) o = g.edgeX + o;
                rt.empty.insert(rt.empty.end(), g.empty.begin(), g.empty.end());
                terms->push_back({rt.coef, sortedUnique(rt.empty)});
            }
        } else {
            for (const Site& s : dyn.readSites(g)) add(s);
        }
        std::vector<std::pair<double, std::uint64_t>> compiled;
        if (terms) {
            for (const RateTerm& rt : *terms) {
                double coef = rt.coef;
                std::uint64_t mask = 0;
                for (const Site& s : rt.empty) {
                    auto it = index.find(s);
                    if (it == index.end())
                        coef *= q;
                    else
                        mask |= 1ULL << it->second;
                }
                compiled.emplace_back(coef, mask);
            }
        }
        depSites = std::max(depSites, sites.size());
        std::vector<std::pair<std::uint32_t, double>> G;
        detail::forEachState(sites.size(), q, est, 1ULL << index.at(origin), [&](std::uint64_t s, double mu) {
            double c = 0.0;
            if (terms) {
                for (const auto& [coef, mask] : compiled)
                    if ((s & mask) == 0) c += coef;
            } else {
                c = dyn.rate(g, [&](const Site& x) { return static_cast<int>((s >> index.at(x)) & 1U); });
            }
            if (c == 0.0) return;
            G.clear();
            const std::uint32_t p = detail::pattern(oldIdx, s), p2 = detail::pattern(newIdx, s);
            if (p != p2) {
                G.emplace_back(p2, 1.0);
                G.emplace_back(p, -1.0);
            }
            form.add(mu * c, lin, G);
        });
    }
    VariationalProblem vp = form.finish(win);
    vp.prefactor = 0.5;
    vp.estimator = est;
    vp.dependencySites = depSites;
    return vp;
}

double selfDiffusionWindow(const PermutationDynamics& dyn, const std::vector<double>& u,
                           const std::vector<Site>& window, double q, const Estimator& est) {
    return solveQP(selfDiffusionQP(dyn, u, window, q, est)).D;
}

double auxSelfDiffusionClosedForm(double q, int clusterSize, const std::vector<double>& u) {
    if (q < 0.0 || q > 1.0) throw ArgumentError("q must lie in [0,1]");
    if (clusterSize < 0) throw ArgumentError("cluster size must be nonnegative");
    double n2 = 0.0;
    for (double x : u) n2 += x * x;
    return 0.5 * std::pow(q, clusterSize) * n2;
}

} // namespace kclg
