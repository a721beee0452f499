#include "kclg/spectral.hpp"

#include "kclg/error.hpp"
#include "kclg/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <sstream>

namespace kclg {

namespace {

std::uint64_t binom(int n, int k) {
    static std::vector<std::vector<std::uint64_t>> table;
    if (table.empty()) {
        table.assign(65, std::vector<std::uint64_t>(65, 0));
        for (int i = 0; i <= 64; ++i) {
            table[i][0] = 1;
            for (int j = 1; j <= i; ++j) {
                std::uint64_t a = table[i - 1][j - 1], b = table[i - 1][j];
                table[i][j] = (a > UINT64_MAX - b) ? UINT64_MAX : a + b;
            }
        }
    }
    if (k < 0 || n < 0 || k > n) return 0;
    return table[n][k];
}

std::uint64_t fullMask(std::size_t n) { return n >= 64 ? ~0ULL : ((1ULL << n) - 1); }

std::uint64_t budgetOr(std::uint64_t b) { return b ? b : defaultBudget(); }

} // namespace

std::uint64_t toMask(const Configuration& c) {
    if (c.size() > 64) throw ArgumentError("configurations with more than 64 sites have no mask form");
    std::uint64_t m = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c.atIndex(static_cast<int>(i))) m |= 1ULL << i;
    return m;
}

Configuration fromMask(const Domain& d, std::uint64_t mask) {
    Configuration c(d, 1);
    for (std::size_t i = 0; i < d.size(); ++i) c.setIndex(static_cast<int>(i), (mask >> i) & 1U);
    return c;
}

StateSpace StateSpace::full(const Domain& d, std::uint64_t budget) {
    if (d.size() > 40 || (1ULL << d.size()) > budgetOr(budget))
        throw BudgetError("state space 2^" + std::to_string(d.size()) + " exceeds the budget");
    StateSpace s;
    s.kind_ = Kind::Full;
    s.dom_ = d;
    s.states_.resize(1ULL << d.size());
    for (std::uint64_t i = 0; i < s.states_.size(); ++i) s.states_[i] = i;
    return s;
}

StateSpace StateSpace::sector(const Domain& d, int k, std::uint64_t budget) {
    const int n = static_cast<int>(d.size());
    if (n > 64) throw ArgumentError("sector spaces need at most 64 sites");
    if (k < 0 || k > n) throw ArgumentError("vacancy count out of range");
    const std::uint64_t count = binom(n, k);
    if (count > budgetOr(budget)) throw BudgetError("sector size exceeds the budget");
    StateSpace s;
    s.kind_ = Kind::Sector;
    s.dom_ = d;
    s.vacancies_ = k;
    s.states_.reserve(count);
    const std::uint64_t all = fullMask(n);
    if (k == 0) {
        s.states_.push_back(all);
        return s;
    }
    std::uint64_t v = fullMask(k);
    for (std::uint64_t i = 0; i < count; ++i) {
        s.states_.push_back(all & ~v);
        if (i + 1 == count) break;
        // Gosper's hack: next mask with the same popcount
        std::uint64_t c = v & (~v + 1), r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    return s;
}

StateSpace StateSpace::subset(const Domain& d, std::vector<std::uint64_t> states) {
    StateSpace s;
    s.kind_ = Kind::Subset;
    s.dom_ = d;
    s.states_ = std::move(states);
    for (std::size_t i = 0; i < s.states_.size(); ++i) s.index_.emplace(s.states_[i], static_cast<long>(i));
    return s;
}

long StateSpace::indexOf(std::uint64_t mask) const {
    switch (kind_) {
    case Kind::Full: return mask < states_.size() ? static_cast<long>(mask) : -1;
    case Kind::Sector: {
        const std::uint64_t vac = ~mask & fullMask(dom_.size());
        if (mask & ~fullMask(dom_.size())) return -1;
        if (std::popcount(vac) != vacancies_) return -1;
        std::uint64_t rank = 0, v = vac;
        for (int j = 0; v; ++j) {
            const int p = std::countr_zero(v);
            rank += binom(p, j + 1);
            v &= v - 1;
        }
        return static_cast<long>(rank);
    }
    case Kind::Subset: {
        auto it = index_.find(mask);
        return it == index_.end() ? -1 : it->second;
    }
    }
    return -1;
}

double RateMatrix::detailedBalanceError() const {
    double worst = 0.0, scale = 0.0;
    for (int i = 0; i < Q.outerSize(); ++i)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Q, i); it; ++it) {
            if (it.col() == i) continue;
            const double a = weight[i] * it.value();
            const double b = weight[it.col()] * Q.coeff(it.col(), i);
            worst = std::max(worst, std::abs(a - b));
            scale = std::max(scale, a);
        }
    return scale > 0 ? worst / scale : 0.0;
}

double RateMatrix::maxRowSum() const {
    double worst = 0.0;
    for (int i = 0; i < Q.outerSize(); ++i) {
        double s = 0.0;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Q, i); it; ++it) s += it.value();
        worst = std::max(worst, std::abs(s));
    }
    return worst;
}

std::string RateMatrix::tripletDump() const {
    std::ostringstream os;
    for (int i = 0; i < Q.outerSize(); ++i)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Q, i); it; ++it)
            os << i << ' ' << it.col() << ' ' << formatDouble(it.value()) << '\n';
    return os.str();
}

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

RateMatrix finish(StateSpace space, Triplets& trips, std::vector<double> weight) {
    const auto n = static_cast<Eigen::Index>(space.size());
    std::vector<double> diag(n, 0.0);
    for (const auto& t : trips) diag[t.row()] -= t.value();
    for (Eigen::Index i = 0; i < n; ++i) trips.emplace_back(i, i, diag[i]);
    RateMatrix r;
    r.space = std::move(space);
    r.Q.resize(n, n);
    r.Q.setFromTriplets(trips.begin(), trips.end());
    double total = 0.0;
    for (double w : weight) total += w;
    for (double& w : weight) w /= total;
    r.weight = std::move(weight);
    return r;
}

template <class Extra>
void exchangeRows(const ConstraintModel& m, const StateSpace& space, Triplets& trips, Extra&& extra) {
    const EdgeTable table(m, space.domain());
    for (std::size_t s = 0; s < space.size(); ++s) {
        const std::uint64_t mask = space.state(s);
        auto occ = [mask](int i) { return static_cast<int>((mask >> i) & 1U); };
        for (std::size_t e = 0; e < table.edges().size(); ++e) {
            const auto& ed = table.edges()[e];
            if (occ(ed.x) == occ(ed.y)) continue;
            const double r = table.rate(e, occ);
            if (r <= 0.0) continue;
            const long t = space.indexOf(mask ^ ((1ULL << ed.x) | (1ULL << ed.y)));
            if (t < 0) throw DomainError("state space is not closed under the exchange dynamics");
            trips.emplace_back(static_cast<Eigen::Index>(s), t, r);
        }
        extra(s, mask);
    }
}

} // namespace

RateMatrix buildReservoirGenerator(const ConstraintModel& m, int L, double q, std::uint64_t budget) {
    if (!(q > 0.0 && q < 1.0)) throw ArgumentError("q must lie in (0,1)");
    const Domain d(m.dim(), L, Boundary::Empty);
    StateSpace space = StateSpace::full(d, budget);
    std::vector<int> boundary;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.onBoundary(d.site(static_cast<int>(i)))) boundary.push_back(static_cast<int>(i));
    Triplets trips;
    exchangeRows(m, space, trips, [&](std::size_t s, std::uint64_t mask) {
        for (int i : boundary) {
            const bool occ = (mask >> i) & 1U;
            trips.emplace_back(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(mask ^ (1ULL << i)),
                               occ ? q : 1.0 - q);
        }
    });
    std::vector<double> w(space.size());
    const int n = static_cast<int>(d.size());
    for (std::size_t s = 0; s < space.size(); ++s) {
        const int occupied = std::popcount(space.state(s));
        w[s] = std::pow(1.0 - q, occupied) * std::pow(q, n - occupied);
    }
    return finish(std::move(space), trips, std::move(w));
}

RateMatrix buildExchangeGenerator(const ConstraintModel& m, StateSpace space) {
    Triplets trips;
    exchangeRows(m, space, trips, [](std::size_t, std::uint64_t) {});
    std::vector<double> w(space.size(), 1.0);
    return finish(std::move(space), trips, std::move(w));
}

RateMatrix buildClosedGenerator(const ConstraintModel& m, int L, int k, Boundary b, std::uint64_t budget) {
    const Domain d(m.dim(), L, b);
    return buildExchangeGenerator(m, StateSpace::sector(d, k, budget));
}

RateMatrix buildTorusGenerator(const ConstraintModel& m, int L, int k, std::uint64_t budget) {
    return buildClosedGenerator(m, L, k, Boundary::Periodic, budget);
}

RateMatrix restrictTo(const RateMatrix& q, const std::vector<std::size_t>& states) {
    std::vector<std::uint64_t> masks;
    std::vector<long> newIndex(q.space.size(), -1);
    for (std::size_t k = 0; k < states.size(); ++k) {
        masks.push_back(q.space.state(states[k]));
        newIndex[states[k]] = static_cast<long>(k);
    }
    Triplets trips;
    std::vector<double> w;
    for (std::size_t k = 0; k < states.size(); ++k) {
        w.push_back(q.weight[states[k]]);
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(q.Q, static_cast<Eigen::Index>(states[k]));
             it; ++it) {
            if (static_cast<std::size_t>(it.col()) == states[k]) continue;
            const long t = newIndex[it.col()];
            if (t >= 0) trips.emplace_back(static_cast<Eigen::Index>(k), t, it.value());
        }
    }
    return finish(StateSpace::subset(q.space.domain(), std::move(masks)), trips, std::move(w));
}

std::vector<int> componentLabels(const RateMatrix& q, int* count) {
    const std::size_t n = q.space.size();
    std::vector<int> label(n, -1);
    int c = 0;
    std::deque<std::size_t> queue;
    for (std::size_t s = 0; s < n; ++s) {
        if (label[s] >= 0) continue;
        label[s] = c;
        queue.push_back(s);
        while (!queue.empty()) {
            const std::size_t u = queue.front();
            queue.pop_front();
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(q.Q, static_cast<Eigen::Index>(u)); it;
                 ++it) {
                if (it.value() <= 0.0 || static_cast<std::size_t>(it.col()) == u) continue;
                if (label[it.col()] < 0) {
                    label[it.col()] = c;
                    queue.push_back(it.col());
                }
            }
        }
        ++c;
    }
    if (count) *count = c;
    return label;
}

namespace {

using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

SpMat symmetrized(const RateMatrix& q) {
    const auto n = q.Q.rows();
    Triplets trips;
    for (Eigen::Index i = 0; i < n; ++i)
        for (SpMat::InnerIterator it(q.Q, i); it; ++it) {
            const double v = -it.value() * std::sqrt(q.weight[i] / q.weight[it.col()]);
            trips.emplace_back(i, it.col(), 0.5 * v);
            trips.emplace_back(it.col(), i, 0.5 * v);
        }
    SpMat S(n, n);
    S.setFromTriplets(trips.begin(), trips.end());
    return S;
}

// Smallest eigenvalue of S on the complement of the unit vector u (Lanczos, full reorthogonalization).
double lanczosSmallest(const SpMat& S, const Eigen::VectorXd& u, const SpectralOptions& opt, std::string& method) {
    const Eigen::Index n = S.rows();
    Rng rng = makeRng(opt.seed, 0x1a2c);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = uniform01(rng) - 0.5;
    v -= u * u.dot(v);
    v.normalize();
    const Eigen::Index maxIt = std::min<Eigen::Index>(n - 1, std::max<Eigen::Index>(400, 150000000 / (8 * n)));
    std::vector<Eigen::VectorXd> basis{v};
    std::vector<double> alpha, beta;
    double prev = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < maxIt; ++j) {
        Eigen::VectorXd w = S * basis[j];
        alpha.push_back(basis[j].dot(w));
        for (int pass = 0; pass < 2; ++pass) {
            w -= u * u.dot(w);
            for (const auto& b : basis) w -= b * b.dot(w);
        }
        const double bj = w.norm();
        const bool last = bj < 1e-13 || j + 1 == maxIt;
        if ((j + 1) % 10 == 0 || last) {
            const Eigen::Index m = static_cast<Eigen::Index>(alpha.size());
            Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
            for (Eigen::Index k = 0; k < m; ++k) {
                T(k, k) = alpha[k];
                if (k + 1 < m) T(k, k + 1) = T(k + 1, k) = beta[k];
            }
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
            const double theta = es.eigenvalues()[0];
            const double resid = bj * std::abs(es.eigenvectors()(m - 1, 0));
            const double scale = std::max(std::abs(es.eigenvalues()[m - 1]), 1e-300);
            if (last || (resid < opt.tolerance * scale && std::abs(theta - prev) <= opt.tolerance * std::abs(theta))) {
                method = "lanczos(" + std::to_string(m) + ")";
                if (!last || bj < 1e-13 || resid < 1e-6 * scale) return theta;
                throw NumericalError("Lanczos did not converge within " + std::to_string(m) + " iterations");
            }
            prev = theta;
        }
        beta.push_back(bj);
        basis.push_back(w / bj);
    }
    throw NumericalError("Lanczos did not converge");
}

RelaxationResult gapOf(const RateMatrix& q, const SpectralOptions& opt) {
    RelaxationResult r;
    const Eigen::Index n = q.Q.rows();
    if (n <= 1) {
        r.gap = std::numeric_limits<double>::infinity();
        r.tau = 0.0;
        r.method = "trivial";
        return r;
    }
    const SpMat S = symmetrized(q);
    if (static_cast<std::size_t>(n) <= opt.denseLimit) {
        Eigen::MatrixXd D(S);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D, Eigen::EigenvaluesOnly);
        r.gap = es.eigenvalues()[1];
        r.method = "dense";
    } else {
        Eigen::VectorXd u(n);
        for (Eigen::Index i = 0; i < n; ++i) u[i] = std::sqrt(q.weight[i]);
        u.normalize();
        r.gap = lanczosSmallest(S, u, opt, r.method);
    }
    if (r.gap <= 0.0) throw NumericalError("nonpositive spectral gap on a connected space");
    r.tau = 1.0 / r.gap;
    return r;
}

} // namespace

RelaxationResult relaxationTime(const RateMatrix& q, const SpectralOptions& opt) {
    int count = 0;
    componentLabels(q, &count);
    if (count > 1) {
        RelaxationResult r;
        r.components = count;
        r.method = "disconnected";
        return r;
    }
    return gapOf(q, opt);
}

RelaxationResult relaxationTime(const RateMatrix& q, int component, const SpectralOptions& opt) {
    int count = 0;
    const auto labels = componentLabels(q, &count);
    if (component < 0 || component >= count) throw ArgumentError("component index out of range");
    std::vector<std::size_t> states;
    for (std::size_t s = 0; s < labels.size(); ++s)
        if (labels[s] == component) states.push_back(s);
    RelaxationResult r = gapOf(restrictTo(q, states), opt);
    r.components = count;
    return r;
}

bool containsEmptyTranslate(const Configuration& c, const std::vector<std::vector<Site>>& clusters) {
    const Domain& d = c.domain();
    const bool periodic = d.boundary() == Boundary::Periodic;
    for (const auto& C : clusters) {
        if (C.empty()) return true;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const Site base = d.site(static_cast<int>(i)) - C[0];
            bool ok = true;
            for (const Site& o : C) {
                const Site s = base + o;
                if (!periodic && !d.inBox(s)) {
                    ok = false;
                    break;
                }
                if (c.atIndex(d.resolve(s))) {
                    ok = false;
                    break;
                }
            }
            if (ok) return true;
        }
    }
    return false;
}

ErgodicReport ergodicComponents(const RateMatrix& q, const std::vector<std::vector<Site>>& clusters) {
    ErgodicReport rep;
    int count = 0;
    rep.labels = componentLabels(q, &count);
    rep.sizes.assign(count, 0);
    rep.hasCluster.assign(count, false);
    std::vector<char> rule(q.space.size());
    for (std::size_t s = 0; s < q.space.size(); ++s) {
        rule[s] = containsEmptyTranslate(q.space.configuration(s), clusters);
        ++rep.sizes[rep.labels[s]];
        if (rule[s]) rep.hasCluster[rep.labels[s]] = true;
    }
    for (std::size_t s = 0; s < q.space.size(); ++s) {
        const bool ergodic = rep.hasCluster[rep.labels[s]];
        rep.ergodicStates += ergodic;
        if (ergodic != static_cast<bool>(rule[s])) {
            if (rep.mismatches == 0)
                rep.exampleMismatch = q.space.configuration(s).str() + (ergodic ? " ergodic without" : " with") +
                                      " an empty cluster translate";
            ++rep.mismatches;
        }
    }
    rep.staticMatch = rep.mismatches == 0;
    return rep;
}

ErgodicReport ergodicComponents(const ConstraintModel& m, int L, int k, const std::vector<std::vector<Site>>& clusters,
                                Boundary b, std::uint64_t budget) {
    return ergodicComponents(buildClosedGenerator(m, L, k, b, budget), clusters);
}

double totalExchangeRate(const Configuration& c, const ConstraintModel& m) {
    const EdgeTable table(m, c.domain());
    auto occ = [&](int i) { return c.atIndex(i); };
    double total = 0.0;
    for (std::size_t e = 0; e < table.edges().size(); ++e) {
        const auto& ed = table.edges()[e];
        if (occ(ed.x) != occ(ed.y)) total += table.rate(e, occ);
    }
    return total;
}

bool isBlocked(const Configuration& c, const ConstraintModel& m) { return totalExchangeRate(c, m) == 0.0; }

BoxCensus boxCensus(const Configuration& c, const std::vector<std::vector<Site>>& clusters, int lambda) {
    const Domain& d = c.domain();
    if (lambda <= 0) throw ArgumentError("box size must be positive");
    for (int a = 0; a < d.dim(); ++a)
        if (d.extent(a) % lambda != 0)
            throw ArgumentError("box size " + std::to_string(lambda) + " does not divide the box side " +
                                std::to_string(d.extent(a)));
    std::size_t N = SIZE_MAX;
    for (const auto& C : clusters) N = std::min(N, C.size());
    if (clusters.empty()) N = 0;
    BoxCensus out;
    std::vector<int> hi(d.dim());
    for (int a = 0; a < d.dim(); ++a) hi[a] = d.extent(a) / lambda - 1;
    Box idx{Site(d.dim()), Site::fromVector(hi)};
    for (const Site& b : idx.sites()) {
        ++out.boxes;
        Box box{b * lambda + Site::fromVector(std::vector<int>(d.dim(), 1)), b * lambda + Site::fromVector(std::vector<int>(d.dim(), lambda))};
        std::size_t vac = 0;
        for (const Site& s : box.sites()) vac += c.at(s) == 0;
        if (vac >= N) ++out.pregood;
        bool good = false;
        for (const auto& C : clusters) {
            for (const Site& x : box.sites()) {
                bool ok = true;
                for (const Site& o : C) {
                    const Site s = x - C[0] + o;
                    if (!box.contains(s) || c.at(s)) {
                        ok = false;
                        break;
                    }
                }
                if (ok) {
                    good = true;
                    break;
                }
            }
            if (good) break;
        }
        out.good += good;
    }
    return out;
}

} // namespace kclg
