#include "kclg/transport.hpp"

#include "kclg/error.hpp"
#include "kclg/util.hpp"
#include "window_enum.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

namespace kclg {

AuxSpec AuxSpec::make(int dim, std::vector<std::vector<Site>> sets) {
    if (static_cast<int>(sets.size()) != dim) throw SpecError("need one auxiliary set per axis");
    AuxSpec s;
    s.dim = dim;
    for (int a = 0; a < dim; ++a) {
        if (sets[a].empty()) throw SpecError("auxiliary set for axis " + std::to_string(a + 1) + " is empty");
        std::set<Site> seen;
        for (const Site& x : sets[a]) {
            if (x.dim != dim) throw SpecError("auxiliary offset has wrong dimension");
            if (!seen.insert(x).second) throw SpecError("duplicate auxiliary offset " + x.str());
        }
        s.sets.push_back(orderAuxSet(sets[a], a));
    }
    return s;
}

AuxSpec AuxSpec::fromCertificate(const MobileClusterCertificate& cert) {
    std::vector<std::vector<Site>> sets;
    for (int a = 0; a < cert.dim; ++a) sets.push_back(defaultAuxSet(cert, a));
    return make(cert.dim, std::move(sets));
}

std::vector<Site> AuxSpec::chain(int axis, int i) const { return auxShifted(sets.at(axis), axis, i); }

int AuxSpec::maxN() const {
    int n = 0;
    for (const auto& s : sets) n = std::max(n, static_cast<int>(s.size()));
    return n;
}

ConstraintModel buildAuxModel(const AuxSpec& spec, const std::string& name) {
    std::vector<EnablingFamily> fams;
    int range = 0;
    for (int a = 0; a < spec.dim; ++a) {
        const Site e = Site::unit(spec.dim, a);
        const auto& A = spec.sets.at(a);
        EnablingFamily fam{a, {}};
        for (int i = 0; i < static_cast<int>(A.size()); ++i) {
            std::vector<Site> fwd, bwd;
            for (const Site& s : spec.chain(a, i))
                if (!(s == A[i])) fwd.push_back(s - A[i]);
            for (const Site& s : spec.chain(a, i + 1))
                if (!(s == A[i] + e)) bwd.push_back(s - A[i]);
            std::sort(fwd.begin(), fwd.end());
            std::sort(bwd.begin(), bwd.end());
            if (fwd != bwd)
                throw SpecError("forward and backward clauses differ on axis " + std::to_string(a + 1) +
                                " at i=" + std::to_string(i));
            for (const Site& o : fwd)
                for (int k = 0; k < spec.dim; ++k) range = std::max(range, std::abs(o[k]));
            fam.clauses.push_back(Clause{fwd, 1.0});
        }
        fams.push_back(std::move(fam));
    }
    ConstraintModel m(name, spec.dim, range, RateMode::WeightedCount, spec.maxN(), std::move(fams));
    m.setAuxSets(spec.sets);
    return m;
}

std::vector<double> totalCurrent(const Configuration& c, const ConstraintModel& aux) {
    const Domain& d = c.domain();
    if (d.boundary() != Boundary::Periodic) throw ArgumentError("totalCurrent needs a periodic domain");
    if (d.dim() != aux.dim()) throw ArgumentError("model and configuration dimensions differ");
    const EdgeTable table(aux, d);
    auto occ = [&](int i) { return c.atIndex(i); };
    std::vector<double> J(d.dim(), 0.0);
    for (std::size_t e = 0; e < table.edges().size(); ++e) {
        const auto& ed = table.edges()[e];
        const int diff = occ(ed.x) - occ(ed.y);
        if (diff == 0) continue;
        // x - y = -e_axis
        J[ed.axis] -= table.rate(e, occ) * diff;
    }
    return J;
}

std::string Estimator::str() const {
    if (kind == Kind::Exact) return "exact";
    return "montecarlo(samples=" + std::to_string(samples) + ",seed=" + std::to_string(seed) + ")";
}

std::optional<std::vector<RateTerm>> rateTerms(const ConstraintModel& m, int axis) {
    const auto& cls = m.family(axis).clauses;
    std::vector<RateTerm> terms;
    switch (m.mode()) {
    case RateMode::Custom: return std::nullopt;
    case RateMode::WeightedCount:
        for (const Clause& c : cls) terms.push_back({c.weight, c.offsets});
        return terms;
    case RateMode::IndicatorAny: {
        // inclusion-exclusion over clause subsets
        if (cls.size() > 12) return std::nullopt;
        for (std::uint32_t T = 1; T < (1U << cls.size()); ++T) {
            std::set<Site> u;
            for (std::size_t i = 0; i < cls.size(); ++i)
                if (T >> i & 1U) u.insert(cls[i].offsets.begin(), cls[i].offsets.end());
            terms.push_back({std::popcount(T) % 2 ? 1.0 : -1.0, {u.begin(), u.end()}});
        }
        return terms;
    }
    }
    return std::nullopt;
}

namespace {

using detail::forEachState;
using detail::pattern;

constexpr int kMaxWindow = 10;

// Sites read by the integrand for one axis, plus index tables. Constraint
// sites outside the gradient window are integrated out through the rate terms.
struct AxisWindow {
    const ConstraintModel* model = nullptr;
    int axis = 0;
    std::vector<Site> sites;
    std::unordered_map<Site, int, SiteHash> index;
    int zero = 0, unit = 0;
    std::vector<std::vector<int>> translates;  // per x: W-index of x + window[j]
    bool integrated = false;
    std::vector<std::pair<double, std::uint64_t>> terms;  // coef * q^|S outside W|, mask of S inside W

    int add(const Site& s) {
        auto [it, fresh] = index.emplace(s, static_cast<int>(sites.size()));
        if (fresh) sites.push_back(s);
        return it->second;
    }

    // E[c | eta on W]
    double rate(std::uint64_t s) const {
        if (integrated) {
            double r = 0.0;
            for (const auto& [coef, mask] : terms)
                if ((s & mask) == 0) r += coef;
            return r;
        }
        return model->rate(axis, [&](const Site& o) { return static_cast<int>((s >> index.at(o)) & 1U); });
    }
};

AxisWindow buildAxisWindow(const ConstraintModel& m, int axis, const std::vector<Site>& window, double q) {
    const int d = m.dim();
    AxisWindow w;
    w.model = &m;
    w.axis = axis;
    const Site e = Site::unit(d, axis);
    w.zero = w.add(Site(d));
    w.unit = w.add(e);
    // translates x with (x + window) meeting {0, e}
    std::set<Site> xs;
    for (const Site& l : window) {
        xs.insert(-l);
        xs.insert(e - l);
    }
    for (const Site& x : xs) {
        std::vector<int> t;
        for (const Site& l : window) t.push_back(w.add(x + l));
        w.translates.push_back(std::move(t));
    }
    auto terms = rateTerms(m, axis);
    if (terms) {
        w.integrated = true;
        for (const RateTerm& t : *terms) {
            double coef = t.coef;
            std::uint64_t mask = 0;
            for (const Site& o : t.empty) {
                auto it = w.index.find(o);
                if (it == w.index.end())
                    coef *= q;
                else
                    mask |= 1ULL << it->second;
            }
            w.terms.emplace_back(coef, mask);
        }
    } else {
        for (const Site& o : m.support(axis)) w.add(o);
    }
    return w;
}

void checkWindow(const ConstraintModel& m, const std::vector<double>& u, const std::vector<Site>& window, double q) {
    if (static_cast<int>(u.size()) != m.dim()) throw ArgumentError("direction vector has wrong dimension");
    if (m.mode() == RateMode::Custom && m.support(0).empty())
        throw ArgumentError("custom model without declared support");
    if (static_cast<int>(window.size()) > kMaxWindow)
        throw BudgetError("window has more than " + std::to_string(kMaxWindow) + " sites");
    std::set<Site> seen;
    for (const Site& s : window) {
        if (s.dim != m.dim()) throw ArgumentError("window site has wrong dimension");
        if (!seen.insert(s).second) throw ArgumentError("duplicate window site " + s.str());
    }
    if (!(q > 0.0 && q < 1.0)) throw ArgumentError("q must lie in (0,1)");
}

} // namespace

double VariationalProblem::value(const Eigen::VectorXd& f) const {
    if (f.size() != A.rows()) throw ArgumentError("coefficient vector has wrong length");
    return f.dot(A * f) + 2.0 * b.dot(f) + c0;
}

VariationalProblem VariationalProblem::permuted(const std::vector<int>& perm) const {
    const auto n = static_cast<Eigen::Index>(perm.size());
    if (n != A.rows()) throw ArgumentError("permutation has wrong length");
    VariationalProblem p = *this;
    for (Eigen::Index i = 0; i < n; ++i) {
        p.basis[i] = basis[perm[i]];
        p.b[i] = b[perm[i]];
        for (Eigen::Index j = 0; j < n; ++j) p.A(i, j) = A(perm[i], perm[j]);
    }
    return p;
}

namespace detail {

IndicatorForm::IndicatorForm(int n)
    : n_(n), A_(Eigen::MatrixXd::Zero(1 << n, 1 << n)), b_(Eigen::VectorXd::Zero(1 << n)) {}

void IndicatorForm::add(double weight, double lin, std::vector<std::pair<std::uint32_t, double>>& grad) {
    c0_ += weight * lin * lin;
    std::sort(grad.begin(), grad.end());
    std::size_t k = 0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (k > 0 && grad[k - 1].first == grad[i].first)
            grad[k - 1].second += grad[i].second;
        else
            grad[k++] = grad[i];
    }
    grad.resize(k);
    for (const auto& [pi, gi] : grad) {
        if (gi == 0.0) continue;
        b_[pi] += weight * lin * gi;
        for (const auto& [pj, gj] : grad) A_(pi, pj) += weight * gi * gj;
    }
}

VariationalProblem IndicatorForm::finish(const std::vector<Site>& window) const {
    const int P = 1 << n_;
    // F(p) = sum_{S subset p} a_S; S = empty (constants) is dropped
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(P, P - 1);
    for (int p = 0; p < P; ++p)
        for (int S = 1; S < P; ++S)
            if ((S & p) == S) M(p, S - 1) = 1.0;
    VariationalProblem vp;
    vp.window = window;
    for (int S = 1; S < P; ++S) vp.basis.push_back(static_cast<std::uint32_t>(S));
    vp.A = M.transpose() * A_ * M;
    vp.A = 0.5 * (vp.A + vp.A.transpose()).eval();
    vp.b = M.transpose() * b_;
    vp.c0 = c0_;
    return vp;
}

} // namespace detail

VariationalProblem assembleDiffusionQP(const ConstraintModel& m, const std::vector<double>& u,
                                       const std::vector<Site>& window, double q, const Estimator& est) {
    checkWindow(m, u, window, q);
    detail::IndicatorForm form(static_cast<int>(window.size()));
    std::size_t depSites = 0;
    for (int a = 0; a < m.dim(); ++a) {
        const AxisWindow w = buildAxisWindow(m, a, window, q);
        depSites = std::max(depSites, w.sites.size());
        const std::uint64_t swap = (1ULL << w.zero) | (1ULL << w.unit);
        std::vector<std::pair<std::uint32_t, double>> G;
        forEachState(w.sites.size(), q, est, 0, [&](std::uint64_t s, double mu) {
            const int h = static_cast<int>((s >> w.zero) & 1U) - static_cast<int>((s >> w.unit) & 1U);
            if (h == 0) return;
            const double c = w.rate(s);
            if (c == 0.0) return;
            G.clear();
            for (const auto& t : w.translates) {
                const std::uint32_t p = pattern(t, s), p2 = pattern(t, s ^ swap);
                if (p == p2) continue;
                G.emplace_back(p2, 1.0);
                G.emplace_back(p, -1.0);
            }
            form.add(mu * c, u[a] * h, G);
        });
    }
    VariationalProblem vp = form.finish(window);
    vp.prefactor = 1.0 / (2.0 * q * (1.0 - q));
    vp.estimator = est;
    vp.dependencySites = depSites;
    return vp;
}

QPSolution solveQP(const VariationalProblem& vp, double tol) {
    QPSolution sol;
    const auto n = vp.A.rows();
    if (n == 0) {
        sol.value = vp.c0;
        sol.D = vp.prefactor * sol.value;
        return sol;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(vp.A);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of the quadratic form failed");
    const auto& ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    const double cutoff = tol * scale;
    if (ev[0] < -cutoff) {
        std::ostringstream os;
        os << "quadratic form is not positive semidefinite: smallest eigenvalue " << ev[0] << " (scale " << scale
           << ")";
        throw NumericalError(os.str());
    }
    const Eigen::VectorXd proj = es.eigenvectors().transpose() * vp.b;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
        if (ev[i] > cutoff) {
            y[i] = -proj[i] / ev[i];
            ++sol.rank;
        }
    sol.coefficients = es.eigenvectors() * y;
    sol.value = vp.value(sol.coefficients);
    sol.D = vp.prefactor * sol.value;
    sol.residual = (vp.A * sol.coefficients + vp.b).norm();
    return sol;
}

double diffusionWindow(const ConstraintModel& m, const std::vector<double>& u, const std::vector<Site>& window,
                       double q, const Estimator& est) {
    return solveQP(assembleDiffusionQP(m, u, window, q, est)).D;
}

double meanRate(const ConstraintModel& m, int axis, double q) {
    if (q < 0.0 || q > 1.0) throw ArgumentError("q must lie in [0,1]");
    if (auto terms = rateTerms(m, axis)) {
        double total = 0.0;
        for (const RateTerm& t : *terms) total += t.coef * std::pow(q, static_cast<int>(t.empty.size()));
        return total;
    }
    const auto sup = m.support(axis);
    if (sup.size() > 30) throw BudgetError("rate support too large to enumerate");
    std::map<Site, int> idx;
    for (std::size_t i = 0; i < sup.size(); ++i) idx.emplace(sup[i], static_cast<int>(i));
    const int ns = static_cast<int>(sup.size());
    double total = 0.0;
    for (std::uint64_t s = 0; s < (1ULL << ns); ++s) {
        const int occ = std::popcount(s);
        const double mu = std::pow(1.0 - q, occ) * std::pow(q, ns - occ);
        if (mu == 0.0) continue;
        total += mu * m.rate(axis, [&](const Site& o) { return static_cast<int>((s >> idx.at(o)) & 1U); });
    }
    return total;
}

double auxDiffusionClosedForm(const ConstraintModel& aux, double q, const std::vector<double>& u) {
    if (static_cast<int>(u.size()) != aux.dim()) throw ArgumentError("direction vector has wrong dimension");
    double v = 0.0;
    for (int a = 0; a < aux.dim(); ++a) v += u[a] * u[a] * meanRate(aux, a, q);
    return v;
}

ExpectationEstimate evaluateExpectation(const ConstraintModel& m, const std::vector<double>& u,
                                        const std::vector<Site>& window, double q,
                                        const std::vector<std::uint32_t>& basis, const Eigen::VectorXd& f,
                                        const Estimator& est) {
    checkWindow(m, u, window, q);
    if (static_cast<Eigen::Index>(basis.size()) != f.size()) throw ArgumentError("basis and coefficients differ");
    auto F = [&](std::uint32_t p) {
        double v = 0.0;
        for (std::size_t k = 0; k < basis.size(); ++k)
            if ((basis[k] & p) == basis[k]) v += f[k];
        return v;
    };
    ExpectationEstimate out;
    double var = 0.0;
    for (int a = 0; a < m.dim(); ++a) {
        const AxisWindow w = buildAxisWindow(m, a, window, q);
        const std::uint64_t swap = (1ULL << w.zero) | (1ULL << w.unit);
        double mean = 0.0, sq = 0.0;
        forEachState(w.sites.size(), q, est, 0, [&](std::uint64_t s, double mu) {
            const int h = static_cast<int>((s >> w.zero) & 1U) - static_cast<int>((s >> w.unit) & 1U);
            // equal endpoints: the exchange is the identity
            if (h == 0) return;
            const double c = w.rate(s);
            if (c == 0.0) return;
            double g = u[a] * h;
            for (const auto& t : w.translates) g += F(pattern(t, s ^ swap)) - F(pattern(t, s));
            const double v = c * g * g;
            mean += mu * v;
            sq += mu * v * v;
        });
        out.mean += mean;
        if (est.kind == Estimator::Kind::MonteCarlo)
            var += std::max(0.0, sq - mean * mean) / static_cast<double>(est.samples);
    }
    out.stderr_ = std::sqrt(var);
    return out;
}

double comparisonConstant(const std::vector<MoveReport>& auxMoves, int dim, double cMaxAux) {
    if (auxMoves.empty()) throw ArgumentError("no auxiliary move reports");
    std::size_t T = 0;
    double loss = 0.0;
    std::set<Site> footprint;
    for (const MoveReport& r : auxMoves) {
        if (!r.valid) throw ValidationError("auxiliary move report is not valid");
        T = std::max(T, r.T);
        loss = std::max(loss, r.loss);
        footprint.insert(r.footprint.begin(), r.footprint.end());
    }
    return dim * static_cast<double>(T * T) * std::pow(2.0, loss) * cMaxAux * static_cast<double>(footprint.size());
}

} // namespace kclg
