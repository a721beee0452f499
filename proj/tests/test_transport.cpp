#include <doctest.h>

#include "kclg/error.hpp"
#include "kclg/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace kclg;

namespace {

const std::vector<Site> kSeq{Site{0}, Site{1}, Site{-1}, Site{2}, Site{-2}, Site{3}, Site{-3}, Site{4}};

std::vector<Site> prefix(int k) { return {kSeq.begin(), kSeq.begin() + k}; }

AuxSpec bt1dAux() { return AuxSpec::make(1, {{Site{1}, Site{2}}}); }

} // namespace

TEST_CASE("auxiliary chain for BT-1d") {
    auto spec = bt1dAux();
    CHECK(spec.sets[0] == std::vector<Site>{Site{2}, Site{1}});
    auto sorted = [](std::vector<Site> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(spec.chain(0, 0)) == std::vector<Site>{Site{1}, Site{2}});
    CHECK(sorted(spec.chain(0, 1)) == std::vector<Site>{Site{1}, Site{3}});
    CHECK(sorted(spec.chain(0, 2)) == std::vector<Site>{Site{2}, Site{3}});
    auto aux = buildAuxModel(spec);
    CHECK(aux.mode() == RateMode::WeightedCount);
    CHECK(aux.cMax() == 2.0);
    REQUIRE(aux.family(0).clauses.size() == 2);
    CHECK(aux.family(0).clauses[0].offsets == std::vector<Site>{Site{-1}});
    CHECK(aux.family(0).clauses[1].offsets == std::vector<Site>{Site{2}});
    CHECK(verifyAxioms(aux).allPass());
    CHECK_THROWS_AS(AuxSpec::make(1, {{Site{1}, Site{1}}}), SpecError);
}

TEST_CASE("BT-2d auxiliary model from the certificate") {
    auto cert = bt2dCertificate();
    auto spec = AuxSpec::fromCertificate(cert);
    CHECK(spec.n(0) == 2 * static_cast<int>(cert.cluster.size()));
    auto aux = buildAuxModel(spec, "aux-bt2d");
    CHECK(verifyAxioms(aux).allPass());
    for (int a = 0; a < 2; ++a) {
        const auto last = spec.chain(a, spec.n(a));
        for (std::size_t j = 0; j < last.size(); ++j) CHECK(last[j] == spec.sets[a][j] + Site::unit(2, a));
    }
}

TEST_CASE("total current vanishes on the torus") {
    auto aux1 = buildAuxModel(bt1dAux());
    auto aux2 = buildAuxModel(AuxSpec::fromCertificate(bt2dCertificate()));
    Rng rng = makeRng(5);
    for (int k = 0; k < 100; ++k) {
        auto c1 = sampleEquilibrium(Domain(1, 12, Boundary::Periodic), uniform01(rng), rng());
        CHECK(totalCurrent(c1, aux1)[0] == 0.0);
        auto c2 = sampleEquilibrium(Domain(2, 12, Boundary::Periodic), uniform01(rng), rng());
        auto J = totalCurrent(c2, aux2);
        CHECK(J[0] == 0.0);
        CHECK(J[1] == 0.0);
    }
    // the original model carries current
    bool nonzero = false;
    for (int k = 0; k < 50 && !nonzero; ++k)
        nonzero = totalCurrent(sampleEquilibrium(Domain(1, 12, Boundary::Periodic), 0.5, 100 + k), bt1d())[0] != 0.0;
    CHECK(nonzero);
    auto one = Configuration::withVacancies(Domain(1, 12, Boundary::Periodic), {Site{4}});
    CHECK(totalCurrent(one, aux1)[0] == 0.0);
    CHECK_THROWS_AS(totalCurrent(Configuration(Domain(1, 5, Boundary::Empty)), aux1), ArgumentError);
}

TEST_CASE("empty window gives the mean rate") {
    auto vp = assembleDiffusionQP(bt1d(), {1.0}, {}, 0.5);
    CHECK(vp.basis.empty());
    auto s = solveQP(vp);
    CHECK(s.D == doctest::Approx(0.75).epsilon(1e-12));
    for (double q : {0.2, 0.5, 0.8}) CHECK(diffusionWindow(bt1d(), {1.0}, {}, q) == doctest::Approx(2 * q - q * q));
}

TEST_CASE("windowed diffusion is monotone and bracketed") {
    for (double q : {0.2, 0.5, 0.8}) {
        double prev = INFINITY;
        for (int k = 0; k <= 6; ++k) {
            const double D = diffusionWindow(bt1d(), {1.0}, prefix(k), q);
            CHECK(D <= prev + 1e-12);
            CHECK(D >= q);
            CHECK(D <= 2 * q);
            prev = D;
        }
    }
}

TEST_CASE("constants are optimal for the auxiliary dynamics") {
    auto aux = buildAuxModel(bt1dAux());
    for (double q : {0.2, 0.5, 0.8}) {
        const double closed = auxDiffusionClosedForm(aux, q, {1.0});
        CHECK(closed >= std::pow(q, 2));
        for (int k = 0; k <= 8; ++k) CHECK(diffusionWindow(aux, {1.0}, prefix(k), q) == doctest::Approx(closed).epsilon(1e-9));
    }
    // one clause per i: at q=1 every clause is satisfied
    CHECK(auxDiffusionClosedForm(aux, 1.0, {1.0}) == 2.0);
    auto aux2 = buildAuxModel(AuxSpec::fromCertificate(bt2dCertificate()));
    const double c2 = auxDiffusionClosedForm(aux2, 0.5, {1.0, 0.0});
    CHECK(c2 >= std::pow(0.5, 8));
    CHECK(diffusionWindow(aux2, {1.0, 0.0}, {Site{0, 0}}, 0.5) == doctest::Approx(c2).epsilon(1e-9));
    const std::vector<Site> w3{Site{0, 0}, Site{1, 0}, Site{0, 1}};
    CHECK(diffusionWindow(aux2, {0.6, 0.8}, w3, 0.3) ==
          doctest::Approx(auxDiffusionClosedForm(aux2, 0.3, {0.6, 0.8})).epsilon(1e-9));
}

TEST_CASE("mean rate against brute-force enumeration") {
    for (const ConstraintModel& m : {bt1d(), bt2d(), glt1d(), buildAuxModel(bt1dAux())}) {
        for (int a = 0; a < m.dim(); ++a) {
            const auto sup = m.support(a);
            REQUIRE(sup.size() <= 20);
            const double q = 0.35;
            double brute = 0.0;
            for (std::uint32_t s = 0; s < (1U << sup.size()); ++s) {
                double mu = 1.0;
                for (std::size_t i = 0; i < sup.size(); ++i) mu *= (s >> i & 1U) ? 1 - q : q;
                brute += mu * m.rate(a, [&](const Site& o) {
                    const auto i = std::find(sup.begin(), sup.end(), o) - sup.begin();
                    return static_cast<int>(s >> i & 1U);
                });
            }
            CHECK(meanRate(m, a, q) == doctest::Approx(brute).epsilon(1e-12));
        }
    }
}

TEST_CASE("quadratic form matches direct evaluation") {
    auto vp = assembleDiffusionQP(bt1d(), {1.0}, prefix(4), 0.3);
    Rng rng = makeRng(11);
    for (int t = 0; t < 5; ++t) {
        Eigen::VectorXd f(vp.A.rows());
        for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = uniform01(rng) * 2 - 1;
        auto ex = evaluateExpectation(bt1d(), {1.0}, vp.window, 0.3, vp.basis, f);
        CHECK(ex.mean == doctest::Approx(vp.value(f)).epsilon(1e-10));
        auto mc = evaluateExpectation(bt1d(), {1.0}, vp.window, 0.3, vp.basis, f, Estimator::monteCarlo(20000, t + 1));
        CHECK(std::abs(mc.mean - vp.value(f)) <= 3 * mc.stderr_ + 1e-12);
    }
    auto mcvp = assembleDiffusionQP(bt1d(), {1.0}, prefix(4), 0.3, Estimator::monteCarlo(20000, 3));
    CHECK(solveQP(mcvp).D == doctest::Approx(solveQP(vp).D).epsilon(0.05));
}

TEST_CASE("QP solver properties") {
    auto vp = assembleDiffusionQP(bt1d(), {1.0}, prefix(5), 0.4);
    auto s = solveQP(vp);
    CHECK(s.value <= vp.c0 + 1e-12);
    CHECK(s.residual < 1e-9);
    std::vector<int> perm(vp.basis.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[0], perm[3]);
    CHECK(solveQP(vp.permuted(perm)).value == doctest::Approx(s.value).epsilon(1e-9));
    VariationalProblem zero = vp;
    zero.b.setZero();
    auto z = solveQP(zero);
    CHECK(z.coefficients.norm() < 1e-12);
    CHECK(z.value == doctest::Approx(vp.c0));
    VariationalProblem bad = vp;
    bad.A(0, 0) = -1.0;
    CHECK_THROWS_AS(solveQP(bad), NumericalError);
}

TEST_CASE("comparison constant") {
    auto m = bt1d();
    auto aux = buildAuxModel(bt1dAux());
    auto mv = trivialAuxMove(m, aux, 0);
    MoveContext ctx;
    ctx.model = &m;
    ctx.window = mv.window;
    auto rep = validate(mv, ctx, ValidationMode::Exhaustive);
    REQUIRE(rep.valid);
    CHECK(rep.T == 1);
    CHECK(rep.loss == 0.0);
    const double k1 = comparisonConstant({rep}, 1, 1.0);
    CHECK(k1 == doctest::Approx(static_cast<double>(rep.footprint.size())));
    MoveReport longer = rep;
    longer.T = 3;
    CHECK(comparisonConstant({longer}, 1, 1.0) > k1);
}
