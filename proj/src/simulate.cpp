#include "kclg/simulate.hpp"

#include "kclg/error.hpp"
#include "kclg/spectral.hpp"
#include "kclg/util.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace kclg {

namespace {

constexpr std::uint64_t kRebuildEvery = 1ULL << 20;

double expDraw(Rng& rng, double rate) { return -std::log1p(-uniform01(rng)) / rate; }

} // namespace

FenwickTree::FenwickTree(std::size_t n) : value_(n, 0.0), tree_(n + 1, 0.0) {
    while (top_ * 2 <= n) top_ *= 2;
}

void FenwickTree::set(std::size_t i, double v) {
    const double delta = v - value_[i];
    if (delta == 0.0) return;
    value_[i] = v;
    total_ += delta;
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += delta;
}

std::size_t FenwickTree::find(double u) const {
    std::size_t pos = 0;
    for (std::size_t step = top_; step; step >>= 1) {
        if (pos + step < tree_.size() && tree_[pos + step] <= u) {
            pos += step;
            u -= tree_[pos];
        }
    }
    return std::min(pos, value_.size() - 1);
}

void FenwickTree::rebuild() {
    std::fill(tree_.begin(), tree_.end(), 0.0);
    total_ = 0.0;
    for (std::size_t i = 0; i < value_.size(); ++i) {
        total_ += value_[i];
        tree_[i + 1] += value_[i];
        const std::size_t parent = (i + 1) + ((i + 1) & (~(i + 1) + 1));
        if (parent < tree_.size()) tree_[parent] += tree_[i + 1];
    }
}

Simulator::Simulator(ConstraintModel m, Configuration init, std::uint64_t seed, std::optional<double> reservoirQ,
                     std::uint64_t stream)
    : model_(std::move(m)), config_(std::move(init)), table_(model_, config_.domain()), q_(reservoirQ),
      rng_(makeRng(seed, stream)), seed_(seed), disp_(config_.domain().dim()) {
    const Domain& d = config_.domain();
    flipIndex_.assign(d.size(), -1);
    if (q_) {
        if (!(*q_ > 0.0 && *q_ < 1.0)) throw ArgumentError("reservoir q must lie in (0,1)");
        if (d.boundary() == Boundary::Periodic) throw ArgumentError("reservoirs need a non-periodic box");
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d.onBoundary(d.site(static_cast<int>(i)))) {
                flipIndex_[i] = static_cast<int>(table_.edges().size() + flipSites_.size());
                flipSites_.push_back(static_cast<int>(i));
            }
    }
    tree_ = FenwickTree(table_.edges().size() + flipSites_.size());
    rebuildAll();
}

double Simulator::eventRate(std::size_t k) const {
    const auto occ = [&](int i) { return config_.atIndex(i); };
    const std::size_t E = table_.edges().size();
    if (k < E) {
        const auto& e = table_.edges()[k];
        if (occ(e.x) == occ(e.y)) return 0.0;
        return table_.rate(k, occ);
    }
    return occ(flipSites_[k - E]) ? *q_ : 1.0 - *q_;
}

void Simulator::setRate(std::size_t k, double v) {
    const bool was = tree_.get(k) > 0.0;
    if (was != (v > 0.0)) active_ += v > 0.0 ? 1 : -1;
    tree_.set(k, v);
}

void Simulator::rebuildAll() {
    for (std::size_t k = 0; k < tree_.size(); ++k) setRate(k, eventRate(k));
    tree_.rebuild();
    sinceRebuild_ = 0;
}

void Simulator::refresh(int site) {
    for (int e : table_.touching(site)) setRate(e, eventRate(e));
    if (flipIndex_[site] >= 0) setRate(flipIndex_[site], eventRate(flipIndex_[site]));
}

double Simulator::rebuildDiscrepancy() const {
    double worst = 0.0;
    for (std::size_t k = 0; k < tree_.size(); ++k) worst = std::max(worst, std::abs(tree_.get(k) - eventRate(k)));
    return worst;
}

std::vector<Event> Simulator::activeEvents() const {
    std::vector<Event> out;
    const std::size_t E = table_.edges().size();
    for (std::size_t k = 0; k < tree_.size(); ++k) {
        if (tree_.get(k) <= 0.0) continue;
        Event ev;
        ev.kind = k < E ? Event::Kind::Exchange : Event::Kind::Flip;
        ev.index = static_cast<int>(k < E ? k : flipSites_[k - E]);
        ev.rate = tree_.get(k);
        out.push_back(ev);
    }
    return out;
}

void Simulator::tagTracer(int site) {
    if (site < 0 || site >= static_cast<int>(config_.domain().size())) throw ArgumentError("tracer site out of range");
    if (!config_.atIndex(site)) throw ArgumentError("the tracer must sit on an occupied site");
    tracer_ = site;
    disp_ = Site(config_.domain().dim());
}

std::optional<Event> Simulator::step() { return stepUntil(std::numeric_limits<double>::infinity()); }

std::optional<Event> Simulator::stepUntil(double limit) {
    if (blocked()) return std::nullopt;
    const double total = tree_.total();
    const double dt = expDraw(rng_, total);
    // memoryless clock: a draw past the limit is discarded
    if (time_ + dt > limit) {
        time_ = limit;
        return std::nullopt;
    }
    time_ += dt;
    std::size_t k = tree_.find(uniform01(rng_) * total);
    // rounding can land on an inert entry; fall back to the nearest active one
    if (tree_.get(k) <= 0.0) {
        std::size_t lo = k, hi = k;
        while (true) {
            if (lo > 0 && tree_.get(--lo) > 0.0) {
                k = lo;
                break;
            }
            if (hi + 1 < tree_.size() && tree_.get(++hi) > 0.0) {
                k = hi;
                break;
            }
        }
    }
    Event ev;
    ev.rate = tree_.get(k);
    const std::size_t E = table_.edges().size();
    if (k < E) {
        const auto& e = table_.edges()[k];
        ev.kind = Event::Kind::Exchange;
        ev.index = static_cast<int>(k);
        const int vx = config_.atIndex(e.x);
        config_.setIndex(e.x, config_.atIndex(e.y));
        config_.setIndex(e.y, vx);
        if (tracer_ == e.x) {
            tracer_ = e.y;
            disp_ = disp_ + Site::unit(disp_.dim, e.axis);
        } else if (tracer_ == e.y) {
            tracer_ = e.x;
            disp_ = disp_ - Site::unit(disp_.dim, e.axis);
        }
        refresh(e.x);
        refresh(e.y);
    } else {
        const int s = flipSites_[k - E];
        ev.kind = Event::Kind::Flip;
        ev.index = s;
        if (s == tracer_) throw DomainError("the tracer cannot sit on a reservoir site");
        config_.flipIndex(s);
        refresh(s);
    }
    ++events_;
    if (++sinceRebuild_ >= kRebuildEvery) {
        tree_.rebuild();
        sinceRebuild_ = 0;
    }
    if (debug_ && rebuildDiscrepancy() != 0.0)
        throw NumericalError("incremental rate update disagrees with a full rebuild after event " +
                             std::to_string(events_));
    return ev;
}

bool Simulator::advanceTo(double t) {
    while (time_ < t) {
        if (blocked()) {
            time_ = t;
            return false;
        }
        stepUntil(t);
    }
    return true;
}

Observable densityObservable() {
    return {"density", [](const Configuration& c) {
                double n = 0;
                for (std::size_t i = 0; i < c.domain().size(); ++i) n += c.atIndex(static_cast<int>(i));
                return n / static_cast<double>(c.domain().size());
            }};
}

Observable siteObservable(int siteIndex) {
    return {"site" + std::to_string(siteIndex), [siteIndex](const Configuration& c) {
                return static_cast<double>(c.atIndex(siteIndex));
            }};
}

std::vector<double> uniformSchedule(double dt, int n) {
    std::vector<double> out;
    for (int i = 1; i <= n; ++i) out.push_back(dt * i);
    return out;
}

std::vector<TimeSeries> run(Simulator& s, const std::vector<double>& schedule, const std::vector<Observable>& obs,
                            const RunOptions& opt) {
    for (std::size_t i = 0; i < schedule.size(); ++i)
        if (schedule[i] < s.time() || (i > 0 && !(schedule[i] > schedule[i - 1])))
            throw ArgumentError("schedule times must be strictly increasing and not before the current time");
    std::vector<TimeSeries> out(obs.size());
    for (std::size_t j = 0; j < obs.size(); ++j) {
        out[j].id = obs[j].id;
        out[j].modelHash = s.model().hash();
        out[j].seed = s.seed();
    }
    for (double t : schedule) {
        const double before = s.time();
        if (s.blocked() && !opt.freezeWhenBlocked) {
            for (auto& ts : out) {
                ts.truncated = true;
                ts.blockedAt = before;
            }
            break;
        }
        if (!s.advanceTo(t) && !opt.freezeWhenBlocked) {
            for (auto& ts : out) {
                ts.truncated = true;
                ts.blockedAt = before;
            }
            break;
        }
        for (std::size_t j = 0; j < obs.size(); ++j) {
            out[j].times.push_back(t);
            out[j].values.push_back(obs[j].fn(s.config()));
        }
    }
    return out;
}

PermutationTracer::PermutationTracer(const PermutationDynamics& dyn, Configuration torus, int tracerSite,
                                     std::uint64_t seed, std::uint64_t stream)
    : dyn_(&dyn), config_(std::move(torus)), tracer_(tracerSite), disp_(dyn.dim()), rng_(makeRng(seed, stream)) {
    const Domain& d = config_.domain();
    if (dyn.kind() != PermutationDynamics::Kind::Aux) throw ArgumentError("use Simulator for kc tracer dynamics");
    if (d.boundary() != Boundary::Periodic) throw ArgumentError("tracer runs need a torus");
    if (d.dim() != dyn.dim()) throw ArgumentError("torus and dynamics dimensions differ");
    if (!config_.atIndex(tracer_)) throw ArgumentError("the tracer must sit on an occupied site");
    family_ = dyn.generators({});
    for (const auto& g : family_) {
        std::vector<Site> reach = g.sigma.support();
        for (const Site& s : g.empty) reach.push_back(s);
        std::vector<int> idx;
        for (const Site& s : reach) idx.push_back(d.resolve(s));
        std::sort(idx.begin(), idx.end());
        std::sort(reach.begin(), reach.end());
        reach.erase(std::unique(reach.begin(), reach.end()), reach.end());
        if (std::unique(idx.begin(), idx.end()) - idx.begin() != static_cast<long>(reach.size()))
            throw ArgumentError("torus too small for the permutation family");
    }
}

double PermutationTracer::rates(std::vector<double>& out) const {
    const Domain& d = config_.domain();
    const Site z = d.site(tracer_);
    out.resize(family_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < family_.size(); ++i) {
        out[i] = dyn_->rate(family_[i], [&](const Site& y) { return config_.atIndex(d.resolve(z + y)); });
        total += out[i];
    }
    return total;
}

bool PermutationTracer::frozen() const {
    std::vector<double> r;
    return rates(r) <= 0.0;
}

std::optional<int> PermutationTracer::step() { return stepUntil(std::numeric_limits<double>::infinity()); }

std::optional<int> PermutationTracer::stepUntil(double limit) {
    std::vector<double> r;
    const double total = rates(r);
    if (total <= 0.0) return std::nullopt;
    const double dt = expDraw(rng_, total);
    if (time_ + dt > limit) {
        time_ = limit;
        return std::nullopt;
    }
    time_ += dt;
    double u = uniform01(rng_) * total;
    std::size_t pick = 0;
    while (pick + 1 < family_.size() && (r[pick] <= 0.0 || u >= r[pick])) {
        u -= r[pick];
        ++pick;
    }
    const Domain& d = config_.domain();
    const Site z = d.site(tracer_);
    const TracerGenerator& g = family_[pick];
    const auto sup = g.sigma.support();
    std::vector<int> vals;
    for (const Site& y : sup) vals.push_back(config_.atIndex(d.resolve(z + y)));
    for (std::size_t i = 0; i < sup.size(); ++i) config_.setIndex(d.resolve(z + g.sigma(sup[i])), vals[i]);
    tracer_ = d.resolve(z + g.jump);
    disp_ = disp_ + g.jump;
    return static_cast<int>(pick);
}

bool PermutationTracer::advanceTo(double t) {
    while (time_ < t) {
        if (frozen()) {
            time_ = t;
            return false;
        }
        stepUntil(t);
    }
    return true;
}

double TracerSeries::dEstimate() const {
    if (times.empty() || times.back() <= 0.0) return 0.0;
    return msdU.back() / (2.0 * times.back());
}

double TracerSeries::dStderr() const {
    if (times.empty() || times.back() <= 0.0) return 0.0;
    return msdUErr.back() / (2.0 * times.back());
}

TracerSeries tracerRun(const PermutationDynamics& dyn, const TracerOptions& opt) {
    const int dim = dyn.dim();
    if (static_cast<int>(opt.u.size()) != dim) throw ArgumentError("direction vector has wrong dimension");
    if (opt.replicas <= 0) throw ArgumentError("need at least one replica");
    if (!(opt.q > 0.0 && opt.q <= 1.0)) throw ArgumentError("q must lie in (0,1]");
    for (std::size_t i = 0; i < opt.schedule.size(); ++i)
        if (opt.schedule[i] < 0 || (i > 0 && !(opt.schedule[i] > opt.schedule[i - 1])))
            throw ArgumentError("schedule times must be strictly increasing");
    const Domain dom(dim, opt.L, Boundary::Periodic);
    const int origin = 0;
    const std::size_t T = opt.schedule.size();
    std::vector<std::vector<Site>> disp(opt.replicas, std::vector<Site>(T, Site(dim)));
    std::vector<char> frozen(opt.replicas, 0);
    parallelFor(static_cast<std::size_t>(opt.replicas), opt.threads, [&](std::size_t r) {
        Rng rng = makeRng(opt.seed, 2 * r);
        Configuration c(dom);
        fillEquilibrium(c, opt.q, rng);
        c.setIndex(origin, 1);
        if (dyn.kind() == PermutationDynamics::Kind::Kc) {
            Simulator s(dyn.model(), std::move(c), opt.seed, std::nullopt, 2 * r + 1);
            s.tagTracer(origin);
            frozen[r] = s.blocked();
            for (std::size_t t = 0; t < T; ++t) {
                s.advanceTo(opt.schedule[t]);
                disp[r][t] = s.displacement();
            }
        } else {
            PermutationTracer p(dyn, std::move(c), origin, opt.seed, 2 * r + 1);
            frozen[r] = p.frozen();
            for (std::size_t t = 0; t < T; ++t) {
                p.advanceTo(opt.schedule[t]);
                disp[r][t] = p.displacement();
            }
        }
    });
    TracerSeries out;
    out.times = opt.schedule;
    out.replicas = opt.replicas;
    for (char f : frozen) out.frozenReplicas += f;
    const double R = opt.replicas;
    for (std::size_t t = 0; t < T; ++t) {
        double su = 0, su2 = 0, su4 = 0, sn = 0, sn2 = 0;
        for (int r = 0; r < opt.replicas; ++r) {
            double proj = 0, norm = 0;
            for (int a = 0; a < dim; ++a) {
                proj += opt.u[a] * disp[r][t][a];
                norm += static_cast<double>(disp[r][t][a]) * disp[r][t][a];
            }
            su += proj;
            su2 += proj * proj;
            su4 += proj * proj * proj * proj;
            sn += norm;
            sn2 += norm * norm;
        }
        out.meanU.push_back(su / R);
        out.msdU.push_back(su2 / R);
        out.msdNorm.push_back(sn / R);
        const double varU = R > 1 ? std::max(0.0, (su4 - su2 * su2 / R) / (R - 1)) : 0.0;
        const double varN = R > 1 ? std::max(0.0, (sn2 - sn * sn / R) / (R - 1)) : 0.0;
        out.msdUErr.push_back(std::sqrt(varU / R));
        out.msdNormErr.push_back(std::sqrt(varN / R));
    }
    return out;
}

AutocorrResult autocorrelation(const std::vector<std::vector<double>>& series, double dt, int maxLag) {
    if (!(dt > 0.0)) throw ArgumentError("sampling interval must be positive");
    AutocorrResult out;
    std::size_t n = 0, shortest = SIZE_MAX;
    double sum = 0.0;
    for (const auto& s : series) {
        n += s.size();
        shortest = std::min(shortest, s.size());
        for (double v : s) sum += v;
    }
    if (n < 2 || shortest < 2) {
        out.degenerate = true;
        out.warning = "not enough samples";
        return out;
    }
    const double mean = sum / static_cast<double>(n);
    double var = 0.0;
    for (const auto& s : series)
        for (double v : s) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (var <= 1e-14 * (1.0 + mean * mean)) {
        out.degenerate = true;
        out.warning = "constant observable: correlation undefined";
        return out;
    }
    const int lagMax = maxLag > 0 ? std::min<int>(maxLag, static_cast<int>(shortest) - 1)
                                  : std::max(1, static_cast<int>(shortest) / 4);
    for (int k = 0; k <= lagMax; ++k) {
        double c = 0.0;
        std::size_t cnt = 0;
        for (const auto& s : series)
            for (std::size_t t = 0; t + k < s.size(); ++t) {
                c += (s[t] - mean) * (s[t + k] - mean);
                ++cnt;
            }
        out.lags.push_back(k * dt);
        out.corr.push_back(c / (static_cast<double>(cnt) * var));
    }
    // Bartlett standard error; fit log C(k) = -k dt / tau over the leading lags above 2 se
    double acc = 1.0, sxx = 0.0, sxy = 0.0, sxyLo = 0.0, sxyHi = 0.0;
    bool hiInf = false;
    double firstSe = 0.0;
    for (int k = 1; k <= lagMax; ++k) {
        const double se = std::sqrt(acc / static_cast<double>(n));
        if (k == 1) firstSe = se;
        const double c = out.corr[k];
        if (!(c > 2.0 * se)) break;
        const double x = k * dt;
        sxx += x * x;
        sxy += -x * std::log(c);
        sxyLo += -x * std::log(std::max(c - se, 1e-300));
        if (c + se >= 1.0) hiInf = true;
        else sxyHi += -x * std::log(c + se);
        ++out.pointsUsed;
        acc += 2.0 * c * c;
    }
    if (out.pointsUsed == 0) {
        out.tau = 0.0;
        out.rate = std::numeric_limits<double>::infinity();
        out.tauLo = 0.0;
        out.tauHi = -dt / std::log(std::min(0.99, 2.0 * firstSe));
        out.wide = true;
        out.warning = "decorrelated within one sampling interval";
        return out;
    }
    out.tau = sxx / sxy;
    out.rate = 1.0 / out.tau;
    out.tauLo = sxx / sxyLo;
    out.tauHi = hiInf ? std::numeric_limits<double>::infinity() : sxx / sxyHi;
    out.wide = out.pointsUsed < 3 || out.tauHi > 2.0 * out.tauLo;
    if (out.wide) out.warning = "few usable lags: wide confidence band";
    return out;
}

ChiSquareResult transitionChiSquare(const ConstraintModel& m, int L, int k, std::uint64_t nEvents,
                                    std::uint64_t seed) {
    const RateMatrix gen = buildTorusGenerator(m, L, k);
    const Domain dom(m.dim(), L, Boundary::Periodic);
    Rng rng = makeRng(seed, 0xc51);
    // start in a random non-blocked state
    std::size_t start = 0;
    for (int tries = 0; tries < 1000; ++tries) {
        start = static_cast<std::size_t>(uniform01(rng) * gen.space.size());
        if (gen.Q.coeff(start, start) < 0.0) break;
    }
    Simulator sim(m, gen.space.configuration(start), seed, std::nullopt, 1);
    std::map<std::pair<std::uint64_t, std::uint64_t>, std::uint64_t> counts;
    std::map<std::uint64_t, std::uint64_t> departures;
    std::uint64_t cur = toMask(sim.config());
    ChiSquareResult out;
    for (std::uint64_t i = 0; i < nEvents; ++i) {
        if (!sim.step()) break;
        const std::uint64_t next = toMask(sim.config());
        ++counts[{cur, next}];
        ++departures[cur];
        cur = next;
        ++out.transitions;
    }
    for (const auto& [from, total] : departures) {
        const long i = gen.space.indexOf(from);
        const double exitRate = -gen.Q.coeff(i, i);
        std::vector<std::pair<double, double>> cells;  // observed, expected
        bool enough = true;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(gen.Q, i); it; ++it) {
            if (it.col() == i || it.value() <= 0.0) continue;
            const double e = static_cast<double>(total) * it.value() / exitRate;
            if (e < 5.0) enough = false;
            auto f = counts.find({from, gen.space.state(static_cast<std::size_t>(it.col()))});
            cells.emplace_back(f == counts.end() ? 0.0 : static_cast<double>(f->second), e);
        }
        if (!enough || cells.size() < 2) continue;
        for (const auto& [o, e] : cells) out.statistic += (o - e) * (o - e) / e;
        out.dof += static_cast<int>(cells.size()) - 1;
    }
    out.pValue = out.dof > 0 ? boost::math::cdf(boost::math::complement(boost::math::chi_squared(out.dof), out.statistic))
                             : 1.0;
    return out;
}

std::string timeSeriesCsv(const std::vector<TimeSeries>& series, const std::string& header) {
    std::ostringstream os;
    std::istringstream hs(header);
    for (std::string line; std::getline(hs, line);) os << "# " << line << "\n";
    if (!series.empty()) os << "# seed=" << series[0].seed << " model_hash=" << series[0].modelHash << "\n";
    for (const auto& s : series)
        if (s.truncated) os << "# " << s.id << " blocked at t=" << formatDouble(s.blockedAt) << "\n";
    os << "t";
    for (const auto& s : series) os << "," << s.id;
    os << "\n";
    const std::size_t rows = series.empty() ? 0 : series[0].times.size();
    for (std::size_t r = 0; r < rows; ++r) {
        os << formatDouble(series[0].times[r]);
        for (const auto& s : series) os << "," << formatDouble(s.values[r]);
        os << "\n";
    }
    return os.str();
}

} // namespace kclg
