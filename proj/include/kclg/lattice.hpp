#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace kclg {

inline constexpr int kMaxDim = 4;

struct Site {
    std::array<int, kMaxDim> c{};
    int dim = 0;

    Site() = default;
    explicit Site(int d);
    Site(std::initializer_list<int> coords);
    static Site fromVector(const std::vector<int>& coords);
    static Site unit(int d, int axis, int sign = 1);

    int operator[](int a) const { return c[a]; }
    int& operator[](int a) { return c[a]; }

    Site operator+(const Site& o) const;
    Site operator-(const Site& o) const;
    Site operator-() const;
    Site operator*(int k) const;
    Site& operator+=(const Site& o);

    bool operator==(const Site& o) const { return dim == o.dim && c == o.c; }
    std::strong_ordering operator<=>(const Site& o) const;

    long dot(const Site& o) const;
    std::vector<int> coords() const { return {c.begin(), c.begin() + dim}; }
    // "3" in d=1, "(1,2)" otherwise.
    std::string str() const;
};

struct SiteHash {
    std::size_t operator()(const Site& s) const noexcept;
};

Site parseSite(int dim, const std::string& text);

struct Direction {
    int axis = 0;  // 0-based
    int sign = 1;

    Site unit(int d) const { return Site::unit(d, axis, sign); }
    Direction reversed() const { return {axis, -sign}; }
    bool operator==(const Direction&) const = default;
    // 2d directions enumerated as +e1,-e1,+e2,-e2,...
    int index() const { return 2 * axis + (sign > 0 ? 0 : 1); }
    static Direction fromIndex(int i) { return {i / 2, (i % 2) ? -1 : 1}; }
    // "+1", "-2" (1-based axis)
    std::string str() const;
    static Direction parse(const std::string& text);
};

// Inclusive box lo..hi.
struct Box {
    Site lo, hi;

    bool contains(const Site& s) const;
    std::size_t size() const;
    std::vector<Site> sites() const;
    static Box cube(int d, int from, int to);
    Box translated(const Site& z) const { return {lo + z, hi + z}; }
    Box hull(const Site& s) const;
};

enum class Boundary { Empty, Occupied, Periodic };

std::string boundaryName(Boundary b);
Boundary parseBoundary(const std::string& name);

class Domain {
public:
    Domain() = default;
    Domain(int dim, int L, Boundary b);
    Domain(std::vector<int> extent, Boundary b);

    int dim() const { return dim_; }
    int extent(int a) const { return extent_[a]; }
    Boundary boundary() const { return boundary_; }
    std::size_t size() const { return size_; }

    bool inBox(const Site& s) const;
    // Flat row-major index (last axis fastest) of a site in the box.
    int index(const Site& s) const;
    Site site(int index) const;
    // Index after periodic wrap, or -1 when the site reads the fixed fill.
    int resolve(const Site& s) const;
    // Occupancy read outside a non-periodic box.
    int fill() const { return boundary_ == Boundary::Empty ? 0 : 1; }
    bool onBoundary(const Site& s) const;
    Box box() const;

    bool operator==(const Domain& o) const;

private:
    int dim_ = 0;
    std::array<int, kMaxDim> extent_{};
    std::array<int, kMaxDim> stride_{};
    std::size_t size_ = 0;
    Boundary boundary_ = Boundary::Occupied;
};

class FinitePermutation;

class Configuration {
public:
    Configuration() = default;
    explicit Configuration(Domain dom, int fillValue = 1);
    // Characters '0'/'1' in index order.
    static Configuration fromBits(Domain dom, const std::string& bits);
    static Configuration withVacancies(Domain dom, const std::vector<Site>& empty);

    const Domain& domain() const { return dom_; }
    std::size_t size() const { return occ_.size(); }
    int at(const Site& s) const;
    int atIndex(int i) const { return occ_[i]; }
    std::size_t vacancyCount() const { return vacancies_; }
    std::vector<Site> vacancies() const;
    const std::vector<std::uint8_t>& occupancy() const { return occ_; }
    std::string str() const;

    // In-place mutators for hot loops.
    void setIndex(int i, int v);
    void swapIndices(int i, int j);
    void flipIndex(int i) { setIndex(i, 1 - occ_[i]); }

    bool operator==(const Configuration& o) const { return dom_ == o.dom_ && occ_ == o.occ_; }

private:
    Domain dom_;
    std::vector<std::uint8_t> occ_;
    std::size_t vacancies_ = 0;
};

Configuration exchange(const Configuration& c, const Site& x, const Site& y);
Configuration flip(const Configuration& c, const Site& x);
Configuration applyPermutation(const Configuration& c, const FinitePermutation& sigma);

class FinitePermutation {
public:
    FinitePermutation() = default;

    static FinitePermutation transposition(const Site& a, const Site& b);
    static FinitePermutation cycle(const std::vector<Site>& sites);
    static FinitePermutation fromMapping(const std::map<Site, Site>& m);
    static FinitePermutation parse(int dim, const std::string& text);

    Site operator()(const Site& y) const;
    Site preimage(const Site& y) const;
    FinitePermutation inverse() const;
    // y -> sigma(y - z) + z
    FinitePermutation conjugatedBy(const Site& z) const;
    // this <- (a b) o this
    void leftMultiply(const Site& a, const Site& b);

    bool isIdentity() const { return fwd_.empty(); }
    std::vector<Site> support() const;
    const std::map<Site, Site>& mapping() const { return fwd_; }
    std::vector<std::vector<Site>> cycles() const;
    std::string str() const;

    bool operator==(const FinitePermutation& o) const { return fwd_ == o.fwd_; }

private:
    void set(const Site& y, const Site& img);
    std::map<Site, Site> fwd_, inv_;
};

// sigma2 o sigma1
FinitePermutation compose(const FinitePermutation& sigma2, const FinitePermutation& sigma1);
FinitePermutation cycleFromSites(const std::vector<Site>& sites);

// Random streams: explicit seeds, per-stream generators derived from (seed, stream).
using Rng = std::mt19937_64;
std::uint64_t splitmix64(std::uint64_t x);
Rng makeRng(std::uint64_t seed, std::uint64_t stream = 0);
inline double uniform01(Rng& r) { return static_cast<double>(r() >> 11) * 0x1.0p-53; }

Configuration sampleEquilibrium(const Domain& dom, double q, std::uint64_t seed);
Configuration sampleFixedVacancies(const Domain& dom, std::size_t k, std::uint64_t seed);
void fillEquilibrium(Configuration& c, double q, Rng& rng);

} // namespace kclg
