// Acceptance run: one PASS/FAIL line per criterion, exit status = number of failures.
#include "kclg/error.hpp"
#include "kclg/models.hpp"
#include "kclg/moves.hpp"
#include "kclg/selfdiff.hpp"
#include "kclg/simulate.hpp"
#include "kclg/spectral.hpp"
#include "kclg/transport.hpp"
#include "kclg/util.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>

using namespace kclg;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Appends to the detail; a false condition fails the criterion.
struct Checker {
    Outcome out;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            out.pass = false;
            note("FAILED " + what);
        }
    }
    void note(const std::string& s) { out.detail += (out.detail.empty() ? "" : "; ") + s; }
};

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

const std::vector<std::vector<Site>> kBt1dClusters{{Site{1}, Site{2}}, {Site{1}, Site{3}}};

AuxSpec bt1dAuxSpec() { return AuxSpec::make(1, {{Site{1}, Site{2}}}); }

MoveReport check(const MoveProgram& p, const ConstraintModel& m, ValidationMode mode, Box window = {},
                 std::uint64_t budget = 0) {
    MoveContext ctx;
    ctx.model = &m;
    ctx.window = window;
    ctx.budget = budget;
    return validate(p, ctx, mode);
}

Outcome axioms() {
    Checker c;
    std::vector<ConstraintModel> models{bt1d(), bt2d(), glt1d(), buildAuxModel(bt1dAuxSpec(), "bt1d-aux"),
                                        buildAuxModel(AuxSpec::fromCertificate(bt2dCertificate()), "bt2d-aux"),
                                        buildAuxModel(AuxSpec::fromCertificate(bt1dCertificate()), "bt1d-aux-cert")};
    for (const auto& m : models) {
        const auto t0 = std::chrono::steady_clock::now();
        auto rep = verifyAxioms(m);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        c.require(rep.allPass(), m.name() + " axioms");
        c.require(s < 1.0, m.name() + " under 1 s");
        c.note(m.name() + " " + fmt(s, 2) + "s");
    }
    return c.out;
}

Outcome moveCalculus() {
    Checker c;
    const auto m1 = bt1d();
    const auto cert = bt1dCertificate();
    const Direction R{0, 1}, Lt{0, -1};
    auto tr = check(cert.translation(R), m1, ValidationMode::Exhaustive, Box::cube(1, -3, 3));
    c.require(tr.valid && tr.permutations.size() == 1 && tr.permutations[0] == FinitePermutation::parse(1, "(2,3,1)"),
              "Tr1 permutation (2,3,1)");
    c.require(tr.loss == 0.0 && tr.energyBarrier == 0, "Tr1 loss 0 and EB 0");
    c.note("Tr1 perm " + (tr.permutations.empty() ? std::string("?") : tr.permutations[0].str()) + ", loss " +
           fmt(tr.loss) + ", EB " + std::to_string(tr.energyBarrier));
    auto exm = bt1dExMinus1Composition(cert);
    c.require(exm.permutation() == FinitePermutation::transposition(Site{-3}, Site{-4}), "Ex-1 permutation (-3,-4)");
    c.require(check(exm, m1, ValidationMode::Exhaustive, Box::cube(1, -4, 3)).valid, "Ex-1 composition valid");
    c.require(cert.exchange(Lt).permutation() == FinitePermutation::transposition(Site{-3}, Site{-4}),
              "certificate Ex-1 permutation");
    c.note("Ex-1 perm " + exm.permutation().str());

    struct Item {
        ConstraintModel m;
        MoveProgram p;
    };
    std::vector<Item> items;
    for (const auto& p : cert.tr) items.push_back({m1, p});
    for (const auto& p : cert.ex) items.push_back({m1, p});
    items.push_back({m1, exm});
    const auto c2 = bt2dCertificate();
    const auto m2 = bt2d();
    for (const auto& p : c2.tr) items.push_back({m2, p});
    for (const auto& p : c2.ex) items.push_back({m2, p});
    items.push_back({m2, bt2dTr2Figure()});
    items.push_back({m2, hopMove(m2, c2)});
    for (int a = 0; a < 2; ++a) items.push_back({m2, sigmaMove(m2, c2, a)});
    int compared = 0, skipped = 0;
    for (const auto& it : items) {
        MoveReport e;
        try {
            e = check(it.p, it.m, ValidationMode::Exhaustive, {}, 1ULL << 16);
        } catch (const BudgetError&) {
            ++skipped;
            continue;
        }
        auto w = check(it.p, it.m, ValidationMode::WorstCase);
        ++compared;
        c.require(w.valid == e.valid && w.permutations == e.permutations, it.p.name + " worst-case vs exhaustive");
    }
    c.require(compared >= 8, "at least 8 moves compared");
    c.note(std::to_string(compared) + " moves with <= 16 free sites agree (" + std::to_string(skipped) +
           " larger skipped)");
    return c.out;
}

Outcome mobilitySearch() {
    Checker c;
    const auto m1 = bt1d();
    for (Direction e : {Direction{0, 1}, Direction{0, -1}}) {
        auto r = searchTranslation(m1, {Site{1}, Site{2}}, 3, e);
        const bool ok = r.status == SearchResult::Status::Found && r.program->steps().size() == 2 &&
                        check(*r.program, m1, ValidationMode::Exhaustive, Box::cube(1, -3, 5)).valid;
        c.require(ok, "BT-1d 2-step Tr" + e.str());
    }
    for (int l = 2; l <= 4; ++l)
        c.require(searchTranslation(m1, {Site{1}}, l, Direction{0, 1}).status == SearchResult::Status::NotFound,
                  "single vacancy l=" + std::to_string(l) + " not mobile");
    const auto m2 = bt2d();
    const std::vector<Site> square{Site{1, 1}, Site{1, 2}, Site{2, 1}, Site{2, 2}};
    int found = 0;
    for (Direction e : {Direction{0, 1}, Direction{0, -1}, Direction{1, 1}, Direction{1, -1}}) {
        auto r = searchTranslation(m2, square, 3, e);
        if (r.status != SearchResult::Status::Found) {
            c.require(false, "BT-2d Tr" + e.str() + " found");
            continue;
        }
        auto rep = check(*r.program, m2, ValidationMode::WorstCase);
        c.require(rep.valid, "BT-2d Tr" + e.str() + " valid");
        ++found;
        c.note("BT-2d Tr" + e.str() + " T=" + std::to_string(rep.T));
    }
    return c.out;
}

Configuration flipAt(Configuration c, const Site& z) {
    c.setIndex(c.domain().index(z), 1 - c.at(z));
    return c;
}

Outcome flipMoves() {
    Checker c;
    const auto m = bt1d();
    const auto cert = bt1dCertificate();
    int worstEB = 0;
    for (int L : {6, 8}) {
        for (int z = 1; z <= L; ++z) {
            auto p = flipMove(m, cert, Site{z}, L);
            MoveContext ctx;
            ctx.model = &m;
            ctx.window = Box::cube(1, 1, L);
            ctx.reservoir = true;
            ctx.finalCheck = [&](const Configuration& a, const Configuration& f) { return f == flipAt(a, Site{z}); };
            auto rep = validate(p, ctx, ValidationMode::Exhaustive);
            c.require(rep.valid && rep.finalCheckFailures == 0 && rep.configsChecked == (1ULL << L),
                      "Flip L=" + std::to_string(L) + " z=" + std::to_string(z));
            c.require(rep.energyBarrier <= 3, "EB <= 3 at L=" + std::to_string(L) + " z=" + std::to_string(z));
            worstEB = std::max(worstEB, rep.energyBarrier);
        }
    }
    c.note("max EB " + std::to_string(worstEB));
    return c.out;
}

Outcome relaxation() {
    Checker c;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    std::string taus;
    for (int L : {4, 6, 8, 10, 12}) {
        auto r = relaxationTime(buildReservoirGenerator(bt1d(), L, 0.5));
        c.require(r.finite(), "finite tau at L=" + std::to_string(L));
        const double x = std::log(L), y = std::log(r.tau);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
        taus += (taus.empty() ? "" : ",") + fmt(r.tau);
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    c.require(slope >= 1.6 && slope <= 2.4, "slope in [1.6,2.4]");
    const double t3 = relaxationTime(buildReservoirGenerator(bt1d(), 8, 0.3)).tau;
    const double t5 = relaxationTime(buildReservoirGenerator(bt1d(), 8, 0.5)).tau;
    c.require(t3 / t5 > 1.0, "tau(0.3)/tau(0.5) > 1");
    c.note("tau=" + taus + " slope " + fmt(slope) + ", tau(0.3)/tau(0.5)=" + fmt(t3 / t5));
    return c.out;
}

Outcome ergodic() {
    Checker c;
    std::size_t sectors = 0;
    for (int L = 2; L <= 10; ++L)
        for (int k = 0; k <= L; ++k) {
            auto rep = ergodicComponents(bt1d(), L, k, kBt1dClusters);
            ++sectors;
            c.require(rep.staticMatch, "static match L=" + std::to_string(L) + " k=" + std::to_string(k) + " " +
                                           rep.exampleMismatch);
        }
    auto gen = buildClosedGenerator(bt1d(), 4, 2, Boundary::Occupied);
    int count = 0;
    auto labels = componentLabels(gen, &count);
    std::vector<std::size_t> sizes(count, 0);
    for (int l : labels) ++sizes[l];
    std::multiset<std::size_t> got(sizes.begin(), sizes.end());
    c.require(got == std::multiset<std::size_t>{1, 5}, "L=4 k=2 sizes {5,1}");
    const auto single = Configuration::withVacancies(Domain(1, 4, Boundary::Occupied), {Site{1}, Site{4}});
    const long si = gen.space.indexOf(toMask(single));
    c.require(si >= 0 && sizes[labels[si]] == 1, "singleton at vacancies {1,4}");
    c.note(std::to_string(sectors) + " sectors match; L=4 k=2 sizes " + std::to_string(*got.rbegin()) + "," +
           std::to_string(*got.begin()));
    return c.out;
}

Outcome blocked() {
    Checker c;
    const auto fig = Configuration::withVacancies(Domain(1, 18, Boundary::Occupied), {Site{10}, Site{13}, Site{16}});
    c.require(totalExchangeRate(fig, bt1d()) == 0.0, "total rate 0");
    Simulator s(bt1d(), fig, 1);
    std::uint64_t attempted = 0;
    for (; attempted < 1000000; ++attempted)
        if (s.step()) break;
    c.require(s.events() == 0 && s.config() == fig, "unchanged after 1e6 event attempts");
    c.note("total rate " + fmt(s.totalRate()) + ", events executed " + std::to_string(s.events()));
    return c.out;
}

Outcome pregood() {
    Checker c;
    const int L = 60, lambda = 5, k = 12, samples = 10000;
    const Domain d(1, L, Boundary::Occupied);
    Rng rng = makeRng(2024);
    int violations = 0, drawn = 0, minPregood = L;
    std::string witness;
    std::vector<int> sites(L);
    for (int i = 0; i < L; ++i) sites[i] = i;
    while (drawn < samples) {
        std::shuffle(sites.begin(), sites.end(), rng);
        Configuration conf(d, 1);
        for (int i = 0; i < k; ++i) conf.setIndex(sites[i], 0);
        if (!containsEmptyTranslate(conf, kBt1dClusters)) continue;
        ++drawn;
        auto census = boxCensus(conf, kBt1dClusters, lambda);
        minPregood = std::min(minPregood, census.pregood);
        if (census.pregood * 2 * lambda < k) {
            if (violations == 0) witness = conf.str();
            ++violations;
        }
    }
    c.require(violations == 0, "pregood >= k/(2 lambda) on every sample");
    c.note(std::to_string(violations) + "/" + std::to_string(drawn) + " ergodic samples below k/(2 lambda)=" +
           fmt(double(k) / (2 * lambda)) + ", min pregood " + std::to_string(minPregood) +
           (witness.empty() ? "" : ", first witness " + witness));
    return c.out;
}

Outcome zeroCurrent() {
    Checker c;
    auto aux1 = buildAuxModel(bt1dAuxSpec());
    auto aux2 = buildAuxModel(AuxSpec::fromCertificate(bt2dCertificate()));
    Rng rng = makeRng(9);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        for (double J : totalCurrent(sampleEquilibrium(Domain(1, 12, Boundary::Periodic), uniform01(rng), rng()), aux1))
            worst = std::max(worst, std::abs(J));
        for (double J : totalCurrent(sampleEquilibrium(Domain(2, 12, Boundary::Periodic), uniform01(rng), rng()), aux2))
            worst = std::max(worst, std::abs(J));
    }
    c.require(worst == 0.0, "current exactly zero");
    c.note("max |J| = " + fmt(worst) + " over 2x1000 tori");
    return c.out;
}

std::vector<Site> line1(int k) {
    std::vector<Site> out;
    for (int i = 1; static_cast<int>(out.size()) < k; ++i) {
        out.push_back(Site{i});
        if (static_cast<int>(out.size()) < k) out.push_back(Site{-i});
    }
    return out;
}

std::vector<Site> ring2(int k) {
    const std::vector<Site> order{Site{0, 0},  Site{1, 0},  Site{0, 1},  Site{1, 1},
                                  Site{-1, 0}, Site{0, -1}, Site{-1, 1}, Site{2, 0}};
    return {order.begin(), order.begin() + k};
}

Outcome auxClosedForm() {
    Checker c;
    auto aux1 = buildAuxModel(bt1dAuxSpec());
    auto aux2 = buildAuxModel(AuxSpec::fromCertificate(bt2dCertificate()));
    double worst = 0.0;
    int problems = 0;
    for (double q : {0.2, 0.5, 0.8}) {
        const double closed1 = auxDiffusionClosedForm(aux1, q, {1.0});
        for (int w = 0; w <= 8; ++w) {
            worst = std::max(worst, std::abs(diffusionWindow(aux1, {1.0}, line1(w), q) - closed1));
            ++problems;
        }
        const std::vector<double> u{0.6, 0.8};
        const double closed2 = auxDiffusionClosedForm(aux2, q, u);
        Estimator exact;
        exact.budget = 1ULL << 26;
        // seven sites already enumerate 2^26 states; eight would need 2^30
        for (int w = 0; w <= (q == 0.5 ? 7 : 6); ++w) {
            worst = std::max(worst, std::abs(diffusionWindow(aux2, u, ring2(w), q, exact) - closed2));
            ++problems;
        }
    }
    c.require(worst <= 1e-9, "QP minimum equals the closed form");
    c.note(std::to_string(problems) + " windows (1d up to 8 sites, 2d up to 7), max deviation " + fmt(worst, 3));
    return c.out;
}

Outcome diffusionBracket() {
    Checker c;
    std::string summary;
    for (double q : {0.2, 0.5, 0.8}) {
        double prev = INFINITY;
        for (int w = 0; w <= 6; ++w) {
            const double D = diffusionWindow(bt1d(), {1.0}, line1(w), q);
            if (w == 0) c.require(std::abs(D - (2 * q - q * q)) <= 1e-9, "D(empty) = 2q-q^2 at q=" + fmt(q));
            c.require(D >= q - 1e-12 && D <= 2 * q + 1e-12, "q <= D <= 2q");
            c.require(D <= prev + 1e-12, "monotone in the window");
            prev = D;
        }
        summary += (summary.empty() ? "" : ", ") + std::string("q=") + fmt(q) + ": D6=" + fmt(prev, 5);
    }
    c.note(summary);
    return c.out;
}

Outcome auxSelfDiffusion() {
    Checker c;
    auto dyn = auxTracerDynamics(bt2d(), bt2dCertificate());
    const int n = static_cast<int>(dyn.hat().size());
    const double target = auxSelfDiffusionClosedForm(0.5, n, {1.0, 0.0});
    TracerOptions o;
    o.L = 64;
    o.q = 0.5;
    o.u = {1.0, 0.0};
    o.replicas = 20000;
    o.seed = 12;
    o.schedule = uniformSchedule(10.0, 10);
    auto tr = tracerRun(dyn, o);
    const double est = tr.dEstimate(), se = tr.dStderr();
    c.require(std::abs(est - target) <= 0.1 * target, "KMC MSD/(2t) within 10% of the closed form");
    const double qp = selfDiffusionWindow(dyn, o.u, {}, 0.5);
    const double qpW = selfDiffusionWindow(dyn, o.u, {Site{1, 0}, Site{0, 1}, Site{-1, 0}, Site{0, -1}}, 0.5);
    c.require(std::abs(qp - target) <= 1e-9, "exact QP equals the closed form");
    c.note("|hat|=" + std::to_string(n) + ", closed form " + fmt(target, 6) + ", KMC " + fmt(est, 5) + " +- " +
           fmt(se, 2) + " (" + std::to_string(o.replicas) + " replicas, " + std::to_string(tr.frozenReplicas) +
           " frozen), QP " + fmt(qp, 10) + " (4-site window " + fmt(qpW, 10) + ")");
    return c.out;
}

Outcome kmcCorrectness() {
    Checker c;
    auto chi = transitionChiSquare(bt1d(), 6, 3, 200000, 13);
    c.require(chi.dof > 0 && chi.pValue > 0.01, "chi-square at the 1% level");
    const Domain d(1, 12, Boundary::Periodic);
    const auto init = sampleEquilibrium(d, 0.5, 77);
    Simulator a(bt1d(), init, 5), b(bt1d(), init, 5);
    const std::vector<Observable> obs{densityObservable(), siteObservable(3)};
    auto ra = run(a, uniformSchedule(0.25, 400), obs), rb = run(b, uniformSchedule(0.25, 400), obs);
    bool same = a.events() == b.events() && a.config() == b.config();
    for (std::size_t i = 0; i < ra.size(); ++i) same = same && ra[i].values == rb[i].values;
    c.require(same, "same seed gives identical runs");
    c.note("chi2=" + fmt(chi.statistic) + " dof=" + std::to_string(chi.dof) + " p=" + fmt(chi.pValue, 3) + " over " +
           std::to_string(chi.transitions) + " jumps; replay of " + std::to_string(a.events()) + " events identical");
    return c.out;
}

Outcome hop() {
    Checker c;
    const auto m = bt2d();
    auto p = hopMove(m, bt2dCertificate());
    MoveContext ctx;
    ctx.model = &m;
    ctx.tracer = Site{0, 0};
    auto rep = validate(p, ctx, ValidationMode::WorstCase);
    const auto sigmaH = FinitePermutation::cycle({Site{1, 0}, Site{1, 1}, Site{0, 1}, Site{-1, 1}, Site{-1, 0}});
    c.require(rep.valid, "Hop validates");
    c.require(rep.permutations.size() == 1 && rep.permutations[0] == sigmaH, "permutation is the 5-cycle");
    c.require(rep.tracerChecked && rep.tracerOk, "tracer only jumps to empty sites");
    c.note("perm " + (rep.permutations.empty() ? std::string("?") : rep.permutations[0].str()) + ", T=" +
           std::to_string(rep.T));
    return c.out;
}

} // namespace

int main() {
    struct Criterion {
        int id;
        std::string name;
        double limit;
        std::function<Outcome()> fn;
    };
    const std::vector<Criterion> all{
        {1, "axioms", 6.0, axioms},
        {2, "move calculus", 10.0, moveCalculus},
        {3, "mobility search", 30.0, mobilitySearch},
        {4, "flip move", 60.0, flipMoves},
        {5, "relaxation scaling", 300.0, relaxation},
        {6, "ergodic components", 60.0, ergodic},
        {7, "blocked configuration", 5.0, blocked},
        {8, "pregood claim", 60.0, pregood},
        {9, "zero current", 5.0, zeroCurrent},
        {10, "closed-form aux diffusion", 60.0, auxClosedForm},
        {11, "diffusion bracket", 300.0, diffusionBracket},
        {12, "aux self-diffusion", 600.0, auxSelfDiffusion},
        {13, "KMC correctness", 60.0, kmcCorrectness},
        {14, "hop move", 30.0, hop},
    };
    int failures = 0;
    for (const auto& cr : all) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (s > cr.limit) {
            o.pass = false;
            o.detail += "; over the time limit";
        }
        failures += !o.pass;
        std::printf("[%s] %2d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name.c_str(), s,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(all.size()) - failures, all.size());
    return failures;
}
