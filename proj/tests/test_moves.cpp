#include "kclg/error.hpp"
#include "kclg/moves.hpp"

#include <doctest.h>

#include <algorithm>

using namespace kclg;

namespace {

MoveReport check(const MoveProgram& p, const ConstraintModel& m, ValidationMode mode, Box window = {}) {
    MoveContext ctx;
    ctx.model = &m;
    ctx.window = window;
    return validate(p, ctx, mode);
}

std::vector<Site> sorted(std::vector<Site> v) {
    std::sort(v.begin(), v.end());
    return v;
}

const Direction R{0, 1}, Lt{0, -1};

} // namespace

TEST_CASE("bt1d translation move") {
    const auto m = bt1d();
    const auto cert = bt1dCertificate();
    const MoveProgram& tr = cert.translation(R);
    REQUIRE(tr.steps().size() == 2);
    CHECK(tr.steps()[0] == MoveStep::exchange(Site{2}, R));
    CHECK(tr.steps()[1] == MoveStep::exchange(Site{1}, R));
    for (auto mode : {ValidationMode::WorstCase, ValidationMode::Exhaustive}) {
        auto rep = check(tr, m, mode, Box::cube(1, -3, 3));
        CHECK(rep.valid);
        CHECK(rep.T == 2);
        CHECK(rep.loss == 0.0);
        CHECK(rep.energyBarrier == 0);
        CHECK(rep.permutationConsistent);
        REQUIRE(rep.permutations.size() == 1);
        CHECK(rep.permutations[0] == FinitePermutation::parse(1, "(2,3,1)"));
    }
    CHECK(cert.trPointwise[R.index()]);
}

TEST_CASE("empty program") {
    const auto m = bt1d();
    auto rep = check(MoveProgram::identity(1), m, ValidationMode::Exhaustive);
    CHECK(rep.valid);
    CHECK(rep.T == 0);
    CHECK(rep.loss == 0.0);
    CHECK(rep.energyBarrier == 0);
    CHECK(rep.permutations.at(0).isIdentity());
}

TEST_CASE("invalid move reports a witness") {
    const auto m = bt1d();
    // exchange (0,1) with nothing empty around
    auto p = MoveProgram::fromSteps("bad", 1, {MoveStep::exchange(Site{0}, R)}, Guard{});
    auto rep = check(p, m, ValidationMode::WorstCase);
    CHECK_FALSE(rep.valid);
    CHECK(rep.witnessStep == 0);
    CHECK(rep.witness.find("constraint violated") != std::string::npos);
    auto ex = check(p, m, ValidationMode::Exhaustive);
    CHECK_FALSE(ex.valid);
}

TEST_CASE("ill-formed guards") {
    const auto m = bt1d();
    auto p = MoveProgram::fromSteps("g", 1, {}, Guard{{Site{1}}, {Site{1}}});
    CHECK_THROWS_AS(check(p, m, ValidationMode::Exhaustive), ArgumentError);
}

TEST_CASE("composition and inversion") {
    const auto m = bt1d();
    const auto cert = bt1dCertificate();
    const MoveProgram tr = cert.translation(R);
    auto withId = compose(tr, MoveProgram::identity(1));
    CHECK(withId.steps() == tr.steps());

    auto twice = compose(tr, translationMove(cert, Site{1}, R));
    auto rep = check(twice, m, ValidationMode::Exhaustive, Box::cube(1, -3, 5));
    CHECK(rep.valid);
    CHECK(rep.T == 4);
    const auto s = twice.permutation();
    CHECK(sorted({s(Site{1}), s(Site{2})}) == std::vector<Site>{Site{3}, Site{4}});

    auto round = compose(tr, inverse(tr));
    CHECK(round.permutation().isIdentity());
    CHECK(check(round, m, ValidationMode::WorstCase).valid);

    // inverse of Tr+1(x+C) is Tr-1(x+1+C)
    for (int x : {-2, 0, 3}) {
        auto a = inverse(translationMove(cert, Site{x}, R));
        auto b = translationMove(cert, Site{x + 1}, Lt);
        CHECK(a.steps() == b.steps());
        CHECK(sorted(a.domain.empty) == sorted(b.domain.empty));
    }
    auto ii = inverse(inverse(tr));
    CHECK(ii.steps() == tr.steps());
    CHECK(ii.domain.empty == tr.domain.empty);

    auto single = MoveProgram::fromSteps("x", 1, {MoveStep::exchange(Site{3}, R)}, Guard{});
    CHECK(inverse(single).steps() == single.steps());
    CHECK(compose(tr, inverse(tr)).permutation() == compose(inverse(tr).permutation(), tr.permutation()));

    MoveProgram guarded;
    guarded.dim = 1;
    guarded.branches = {{Guard{{Site{0}}, {}}, {}}, {Guard{}, {}}};
    CHECK_THROWS_AS(inverse(guarded), ArgumentError);
    CHECK_THROWS_AS(compose(tr, tr, Box::cube(1, 0, 1)), ArgumentError);
}

TEST_CASE("bt1d exchange moves") {
    const auto m = bt1d();
    const auto cert = bt1dCertificate();
    const auto& ex1 = cert.exchange(R);
    REQUIRE(ex1.steps().size() == 1);
    CHECK(ex1.steps()[0] == MoveStep::exchange(Site{3}, R));
    auto exm = bt1dExMinus1Composition(cert);
    CHECK(exm.steps().size() == 21);
    CHECK(exm.permutation() == FinitePermutation::transposition(Site{-3}, Site{-4}));
    auto rep = check(exm, m, ValidationMode::Exhaustive, Box::cube(1, -4, 3));
    CHECK(rep.valid);
    CHECK(rep.energyBarrier == 0);

    auto built = exchangeFromTranslation(m, cert.tr, cert.cluster, 3, Lt);
    REQUIRE(built);
    CHECK(built->permutation() == FinitePermutation::transposition(Site{-3}, Site{-4}));
    auto plus = exchangeFromTranslation(m, cert.tr, cert.cluster, 3, R);
    REQUIRE(plus);
    CHECK(plus->steps() == ex1.steps());
}

TEST_CASE("translation search") {
    const auto m = bt1d();
    auto r = searchTranslation(m, {Site{1}, Site{2}}, 3, R);
    REQUIRE(r.status == SearchResult::Status::Found);
    CHECK(r.program->steps().size() == 2);
    CHECK(check(*r.program, m, ValidationMode::Exhaustive, Box::cube(1, -3, 3)).valid);
    CHECK_THROWS_AS(searchTranslation(m, {Site{1}}, 1, R), ArgumentError);
    for (int l = 2; l <= 4; ++l) {
        auto single = searchTranslation(m, {Site{1}}, l, R);
        CHECK(single.status == SearchResult::Status::NotFound);
    }
    CHECK_THROWS_AS(searchTranslation(m, {}, 3, R), ArgumentError);
    auto tiny = searchTranslation(bt2d(), {Site{1, 1}, Site{1, 2}, Site{2, 1}, Site{2, 2}}, 3, Direction{0, 1}, 3);
    CHECK(tiny.status == SearchResult::Status::BudgetExceeded);

    auto c = certify(m, {Site{1}, Site{2}}, 3);
    REQUIRE(c.certificate);
    CHECK(c.certificate->exchange(Lt).permutation() == FinitePermutation::transposition(Site{-3}, Site{-4}));
    auto none = certify(m, {Site{1}}, 3);
    CHECK_FALSE(none.certificate);
    CHECK_FALSE(none.failure.empty());
}

TEST_CASE("bt2d certificate") {
    const auto m = bt2d();
    const auto cert = bt2dCertificate();
    const MoveProgram fig = bt2dTr2Figure();
    CHECK(cert.translation(Direction{1, 1}).steps() == fig.steps());
    auto rep = check(fig, m, ValidationMode::Exhaustive, Box::cube(2, -3, 3));
    CHECK(rep.valid);
    CHECK(rep.T == 4);
    for (int di = 0; di < 4; ++di) {
        CHECK(cert.trReports[di].valid);
        CHECK(cert.exReports[di].valid);
    }
}

TEST_CASE("worst-case agrees with exhaustive on small library moves") {
    struct Item {
        ConstraintModel m;
        MoveProgram p;
    };
    std::vector<Item> items;
    const auto c1 = bt1dCertificate();
    for (const auto& p : c1.tr) items.push_back({bt1d(), p});
    for (const auto& p : c1.ex) items.push_back({bt1d(), p});
    const auto c2 = bt2dCertificate();
    for (const auto& p : c2.tr) items.push_back({bt2d(), p});
    int compared = 0;
    for (const auto& it : items) {
        auto w = check(it.p, it.m, ValidationMode::WorstCase);
        MoveReport e;
        try {
            e = check(it.p, it.m, ValidationMode::Exhaustive);
        } catch (const BudgetError&) {
            continue;
        }
        ++compared;
        CHECK(w.valid == e.valid);
        CHECK(w.permutations == e.permutations);
        CHECK(e.permutationConsistent);
    }
    CHECK(compared >= 8);
}

TEST_CASE("flip move on a reservoir box") {
    const auto m = bt1d();
    const auto cert = bt1dCertificate();
    for (int L : {6}) {
        for (int z = 1; z <= L; ++z) {
            auto p = flipMove(m, cert, Site{z}, L);
            MoveContext ctx;
            ctx.model = &m;
            ctx.window = Box::cube(1, 1, L);
            ctx.reservoir = true;
            ctx.finalCheck = [&](const Configuration& a, const Configuration& f) { return f == flip(a, Site{z}); };
            auto rep = validate(p, ctx, ValidationMode::Exhaustive);
            CHECK(rep.valid);
            CHECK(rep.finalCheckFailures == 0);
            CHECK(rep.energyBarrier <= 3);
            CHECK(rep.energyBarrier >= 1);
            CHECK(rep.configsChecked == (1u << L));
            if (z == 1) CHECK(rep.T == 1);
        }
    }
}

TEST_CASE("hop and sigma moves") {
    const auto m = bt2d();
    const auto cert = bt2dCertificate();
    CHECK_THROWS_AS(hopMove(bt1d(), bt1dCertificate()), ArgumentError);
    auto hop = hopMove(m, cert);
    MoveContext ctx;
    ctx.model = &m;
    ctx.tracer = Site{0, 0};
    auto rep = validate(hop, ctx, ValidationMode::WorstCase);
    CHECK(rep.valid);
    CHECK(rep.tracerOk);
    CHECK(rep.permutations.at(0) ==
          FinitePermutation::cycle({Site{1, 0}, Site{1, 1}, Site{0, 1}, Site{-1, 1}, Site{-1, 0}}));
    for (int a = 0; a < 2; ++a) {
        auto s = sigmaMove(m, cert, a);
        auto r = validate(s, ctx, ValidationMode::WorstCase);
        CHECK(r.valid);
        CHECK(r.tracerOk);
        REQUIRE(r.tracerDisplacements.size() == 1);
        CHECK(r.tracerDisplacements[0] == Site::unit(2, a));
    }
}

TEST_CASE("aux moves") {
    const auto m = bt1d();
    const auto cert = bt1dCertificate();
    const auto A = defaultAuxSet(cert, 0);
    CHECK(A == std::vector<Site>{Site{5}, Site{4}, Site{2}, Site{1}});
    for (int i = 0; i < 4; ++i) {
        auto p = auxMove(m, cert, 0, i);
        auto rep = check(p, m, ValidationMode::WorstCase);
        CHECK(rep.valid);
        CHECK(p.permutation() == FinitePermutation::transposition(Site{0}, Site{1}));
    }
    auto u = auxMoveUnion(m, cert, 0);
    auto ex = check(u, m, ValidationMode::Exhaustive);
    CHECK(ex.valid);
    CHECK(ex.loss <= 2.0 + 1e-12);
    const auto c2 = bt2dCertificate();
    for (int a = 0; a < 2; ++a)
        for (int i = 0; i < 8; ++i) CHECK(check(auxMove(bt2d(), c2, a, i), bt2d(), ValidationMode::WorstCase).valid);
}

TEST_CASE("move and certificate JSON round trip") {
    const auto cert = bt1dCertificate();
    const auto m = bt1d();
    auto p = flipMove(m, cert, Site{3}, 6);
    const std::string text = moveToJson(p);
    CHECK(moveToJson(moveFromJson(text)) == text);
    const std::string ct = certificateToJson(cert, m);
    ConstraintModel back;
    auto c2 = certificateFromJson(ct, &back);
    CHECK(certificateToJson(c2, back) == ct);
    CHECK_THROWS_AS(moveFromJson("{\"schema\":\"kclg.move/1\"}"), SpecError);
    CHECK_THROWS_AS(moveFromJson("not json"), SpecError);
}
