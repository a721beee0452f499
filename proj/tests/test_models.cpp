#include <doctest.h>

#include "kclg/error.hpp"
#include "kclg/models.hpp"

using namespace kclg;

TEST_CASE("BT-1d edge rates") {
    auto m = bt1d();
    Domain d(1, 6, Boundary::Occupied);
    // eta(x-1)=0, eta(x)=1, eta(x+1)=0, eta(x+2)=1 with x=3
    auto c = Configuration::fromBits(d, "101011");
    CHECK(m.edgeRate(c, Site{3}, {0, 1}) == 1.0);
    CHECK(m.edgeRate(c, Site{4}, {0, -1}) == 1.0);
    auto blocked = Configuration::fromBits(d, "111011");
    CHECK(m.edgeRate(blocked, Site{3}, {0, 1}) == 0.0);
    Configuration empty(Domain(1, 6, Boundary::Empty), 0);
    CHECK(m.edgeRate(empty, Site{2}, {0, 1}) == 1.0);
}

TEST_CASE("GLT rate two when both neighbours empty") {
    auto m = glt1d();
    Configuration empty(Domain(1, 6, Boundary::Periodic), 0);
    CHECK(m.edgeRate(empty, Site{3}, {0, 1}) == 2.0);
}

TEST_CASE("reservoir rates") {
    Domain d(1, 4, Boundary::Empty);
    auto c = Configuration::fromBits(d, "1001");
    CHECK(reservoirRate(c, Site{1}, 0.3) == doctest::Approx(0.3));
    auto e = Configuration::fromBits(d, "0001");
    CHECK(reservoirRate(e, Site{1}, 0.3) == doctest::Approx(0.7));
    CHECK(reservoirRate(c, Site{4}, 0.5) == 0.5);
    CHECK(reservoirRate(e, Site{1}, 0.5) == 0.5);
    CHECK_THROWS_AS(reservoirRate(c, Site{2}, 0.3), ArgumentError);
}

TEST_CASE("axioms of the built-in models") {
    for (auto m : {bt1d(), bt2d(), glt1d()}) {
        auto rep = verifyAxioms(m);
        CHECK_MESSAGE(rep.allPass(), m.name());
        CHECK(rep.entries.size() == 6);
    }
}

TEST_CASE("structural rejection and range failure") {
    CHECK_THROWS_AS(ConstraintModel("bad", 1, 2, RateMode::IndicatorAny, 1.0,
                                    {EnablingFamily{0, {Clause{{Site{0}}, 1.0}}}}),
                    SpecError);
    CHECK_THROWS_AS(ConstraintModel("bad", 1, 2, RateMode::IndicatorAny, 1.0,
                                    {EnablingFamily{0, {Clause{{Site{1}}, 1.0}}}}),
                    SpecError);
    ConstraintModel half("half", 1, 2, RateMode::WeightedCount, 1.0,
                         {EnablingFamily{0, {Clause{{Site{-1}}, 0.5}}}});
    auto rep = verifyAxioms(half);
    CHECK_FALSE(rep.entries[0].pass);
    CHECK(rep.entries[0].witness.find("-1") != std::string::npos);
}

TEST_CASE("custom rate functions go through the same verifier") {
    auto m = ConstraintModel::custom(
        "custom-bt", 1, 2, 1.0,
        [](int, const OffsetReader& occ) { return (!occ(Site{-1}) || !occ(Site{2})) ? 1.0 : 0.0; },
        {{Site{-1}, Site{2}}});
    CHECK(verifyAxioms(m).allPass());
    auto bad = ConstraintModel::custom(
        "reads-endpoint", 1, 2, 1.0, [](int, const OffsetReader& occ) { return occ(Site{0}) ? 0.0 : 1.0; },
        {{Site{0}}});
    CHECK_FALSE(verifyAxioms(bad).entries[1].pass);
}

TEST_CASE("edge rates do not depend on endpoints, are monotone and homogeneous") {
    auto m = bt2d();
    Domain d({5, 5}, Boundary::Periodic);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto c = sampleEquilibrium(d, 0.4, seed);
        for (int i = 0; i < int(d.size()); ++i) {
            Site x = d.site(i);
            for (int a = 0; a < 2; ++a) {
                Direction dir{a, 1};
                double r = m.edgeRate(c, x, dir);
                CHECK(r == m.edgeRate(flip(c, x), x, dir));
                Site y = x + dir.unit(2);
                CHECK(r == m.edgeRate(exchange(c, x, y), x, dir));
                // translate by (1,2)
                Configuration t(d, 1);
                for (int k = 0; k < int(d.size()); ++k) t.setIndex(d.resolve(d.site(k) + Site{1, 2}), c.atIndex(k));
                CHECK(r == m.edgeRate(t, x + Site{1, 2}, dir));
            }
        }
    }
}

TEST_CASE("model spec round trip is bit exact") {
    for (auto m : {bt1d(), bt2d(), glt1d()}) {
        std::string text = modelToJson(m);
        CHECK(modelToJson(modelFromJson(text)) == text);
        CHECK(modelFromJson(text).hash() == m.hash());
    }
    CHECK_THROWS_AS(modelFromJson("{\"schema\":\"kclg.model/1\"}"), SpecError);
    CHECK_THROWS_AS(modelFromJson("not json"), SpecError);
}

TEST_CASE("edge table agrees with direct evaluation") {
    for (auto b : {Boundary::Empty, Boundary::Occupied, Boundary::Periodic}) {
        auto m = bt1d();
        Domain d(1, 7, b);
        EdgeTable tab(m, d);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            auto c = sampleEquilibrium(d, 0.5, seed);
            for (std::size_t e = 0; e < tab.edges().size(); ++e) {
                auto ed = tab.edges()[e];
                double r = tab.rate(e, [&](int i) { return c.atIndex(i); });
                CHECK(r == m.edgeRate(c, d.site(ed.x), {ed.axis, 1}));
            }
        }
    }
}
