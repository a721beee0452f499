#include <doctest.h>

#include "kclg/error.hpp"
#include "kclg/spectral.hpp"

#include <cmath>
#include <set>

using namespace kclg;

namespace {

std::set<int> vacancyIndices(std::uint64_t mask, int n) {
    std::set<int> v;
    for (int i = 0; i < n; ++i)
        if (!((mask >> i) & 1U)) v.insert(i + 1);
    return v;
}

std::uint64_t rotate(std::uint64_t m, int n) {
    const std::uint64_t full = (1ULL << n) - 1;
    return ((m << 1) | (m >> (n - 1))) & full;
}

const std::vector<std::vector<Site>> kBt1dClusters{{Site{1}, Site{2}}, {Site{1}, Site{3}}};

} // namespace

TEST_CASE("sector enumeration and index maps") {
    Domain d(1, 6, Boundary::Occupied);
    auto s = StateSpace::sector(d, 3);
    REQUIRE(s.size() == 20);
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(std::popcount(s.state(i)) == 3);
        CHECK(s.indexOf(s.state(i)) == static_cast<long>(i));
    }
    // colex order: first state has vacancies {1,2,3}
    CHECK(vacancyIndices(s.state(0), 6) == std::set<int>{1, 2, 3});
    CHECK(vacancyIndices(s.state(1), 6) == std::set<int>{1, 2, 4});
    CHECK(s.indexOf(0b111111) == -1);
    auto zero = StateSpace::sector(d, 0);
    CHECK(zero.size() == 1);
    CHECK(zero.state(0) == 0b111111);
    CHECK_THROWS_AS(StateSpace::sector(Domain(1, 30, Boundary::Occupied), 15, 1000), BudgetError);
}

TEST_CASE("two-state reservoir chain") {
    auto r = buildReservoirGenerator(bt1d(), 1, 0.3);
    CHECK(r.space.size() == 2);
    auto res = relaxationTime(r);
    CHECK(res.tau == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("reservoir generator detailed balance") {
    auto r = buildReservoirGenerator(bt1d(), 6, 0.3);
    CHECK(r.space.size() == 64);
    CHECK(r.detailedBalanceError() < 1e-12);
    CHECK(r.maxRowSum() < 1e-12);
    double total = 0;
    for (double w : r.weight) total += w;
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("closed BT-1d L=4 k=2") {
    auto q = buildClosedGenerator(bt1d(), 4, 2, Boundary::Occupied);
    REQUIRE(q.space.size() == 6);
    // hand listing of allowed exchanges
    std::set<std::pair<std::set<int>, std::set<int>>> expected{
        {{1, 2}, {1, 3}}, {{1, 3}, {2, 3}}, {{2, 3}, {2, 4}}, {{2, 4}, {3, 4}}};
    std::set<std::pair<std::set<int>, std::set<int>>> found;
    for (int i = 0; i < q.Q.outerSize(); ++i)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(q.Q, i); it; ++it) {
            if (it.col() == i) continue;
            CHECK(it.value() == 1.0);
            auto a = vacancyIndices(q.space.state(i), 4), b = vacancyIndices(q.space.state(it.col()), 4);
            CHECK(a.size() == b.size());
            found.insert(std::min(a, b) == a ? std::pair{a, b} : std::pair{b, a});
        }
    CHECK(found == expected);

    auto full = relaxationTime(q);
    CHECK_FALSE(full.finite());
    CHECK(std::isinf(full.tau));
    CHECK(full.components == 2);

    auto rep = ergodicComponents(q, kBt1dClusters);
    CHECK(rep.ergodicStates == 5);
    CHECK(rep.staticMatch);
    int big = -1;
    for (std::size_t c = 0; c < rep.sizes.size(); ++c) {
        if (rep.sizes[c] == 5) big = static_cast<int>(c);
        if (rep.sizes[c] == 1) {
            for (std::size_t s = 0; s < rep.labels.size(); ++s)
                if (rep.labels[s] == static_cast<int>(c)) CHECK(vacancyIndices(q.space.state(s), 4) == std::set<int>{1, 4});
        }
    }
    REQUIRE(big >= 0);
    // the component is a path on five states with unit rates
    auto res = relaxationTime(q, big);
    CHECK(res.tau == doctest::Approx(1.0 / (2.0 - 2.0 * std::cos(M_PI / 5.0))));
}

TEST_CASE("torus generator is translation covariant") {
    const int L = 7;
    auto q = buildTorusGenerator(bt1d(), L, 3);
    std::size_t checked = 0;
    for (int i = 0; i < q.Q.outerSize(); ++i)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(q.Q, i); it; ++it) {
            const long a = q.space.indexOf(rotate(q.space.state(i), L));
            const long b = q.space.indexOf(rotate(q.space.state(it.col()), L));
            CHECK(q.Q.coeff(a, b) == it.value());
            ++checked;
        }
    CHECK(checked > 35);
}

TEST_CASE("vacancy count is conserved by exchange dynamics") {
    auto q = buildClosedGenerator(glt1d(), 6, 3, Boundary::Empty);
    for (int i = 0; i < q.Q.outerSize(); ++i)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(q.Q, i); it; ++it)
            CHECK(std::popcount(q.space.state(i)) == std::popcount(q.space.state(it.col())));
}

TEST_CASE("relaxation time scales inversely with the rates") {
    auto r = buildReservoirGenerator(bt1d(), 5, 0.4);
    auto base = relaxationTime(r);
    r.Q *= 3.0;
    auto scaled = relaxationTime(r);
    CHECK(scaled.tau == doctest::Approx(base.tau / 3.0).epsilon(1e-9));
}

TEST_CASE("dense and Lanczos agree") {
    auto r = buildReservoirGenerator(bt1d(), 9, 0.5);
    SpectralOptions dense, lanczos;
    lanczos.denseLimit = 0;
    auto a = relaxationTime(r, dense), b = relaxationTime(r, lanczos);
    CHECK(a.method == "dense");
    CHECK(b.method.rfind("lanczos", 0) == 0);
    CHECK(b.tau == doctest::Approx(a.tau).epsilon(1e-8));
}

TEST_CASE("more permissive model relaxes faster") {
    auto a = relaxationTime(buildReservoirGenerator(bt1d(), 6, 0.5));
    auto b = relaxationTime(buildReservoirGenerator(sep(1), 6, 0.5));
    CHECK(b.tau <= a.tau * (1 + 1e-12));
}

TEST_CASE("blocked configurations") {
    Domain d(1, 18, Boundary::Occupied);
    auto fig = Configuration::withVacancies(d, {Site{10}, Site{13}, Site{16}});
    CHECK(isBlocked(fig, bt1d()));
    auto pair = Configuration::withVacancies(d, {Site{7}, Site{8}});
    CHECK_FALSE(isBlocked(pair, bt1d()));
    CHECK(isBlocked(Configuration(d, 1), bt1d()));
}

TEST_CASE("k=0 sector") {
    auto rep = ergodicComponents(bt1d(), 5, 0, kBt1dClusters);
    CHECK(rep.sizes.size() == 1);
    CHECK(rep.sizes[0] == 1);
    CHECK(rep.ergodicStates == 0);
}

TEST_CASE("BT-2d static characterization fails in a small box") {
    std::vector<std::vector<Site>> clusters{{Site{1, 1}, Site{1, 2}, Site{2, 1}, Site{2, 2}}};
    auto rep = ergodicComponents(bt2d(), 5, 4, clusters);
    CHECK(rep.mismatches > 0);
    CHECK_FALSE(rep.staticMatch);
}

TEST_CASE("box census") {
    Domain d(1, 12, Boundary::Periodic);
    auto empty = Configuration(d, 0);
    auto all = boxCensus(empty, kBt1dClusters, 3);
    CHECK(all.boxes == 4);
    CHECK(all.pregood == 4);
    CHECK(all.good == 4);
    auto one = Configuration::withVacancies(d, {Site{3}, Site{4}});
    auto c = boxCensus(one, kBt1dClusters, 3);
    CHECK(c.pregood == 0);
    CHECK(c.good == 0);
    auto two = Configuration::withVacancies(d, {Site{4}, Site{6}});
    c = boxCensus(two, kBt1dClusters, 3);
    CHECK(c.pregood == 1);
    CHECK(c.good == 1);
    CHECK_THROWS_AS(boxCensus(empty, kBt1dClusters, 5), ArgumentError);
}
