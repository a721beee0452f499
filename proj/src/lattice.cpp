#include "kclg/lattice.hpp"

#include "kclg/error.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace kclg {

Site::Site(int d) : dim(d) {
    if (d < 1 || d > kMaxDim)
        throw ArgumentError("dimension must be in 1.." + std::to_string(kMaxDim));
}

Site::Site(std::initializer_list<int> coords) : Site(static_cast<int>(coords.size())) {
    std::copy(coords.begin(), coords.end(), c.begin());
}

Site Site::fromVector(const std::vector<int>& coords) {
    Site s(static_cast<int>(coords.size()));
    std::copy(coords.begin(), coords.end(), s.c.begin());
    return s;
}

Site Site::unit(int d, int axis, int sign) {
    Site s(d);
    if (axis < 0 || axis >= d) throw ArgumentError("axis out of range");
    s.c[axis] = sign;
    return s;
}

Site Site::operator+(const Site& o) const {
    Site r = *this;
    for (int a = 0; a < dim; ++a) r.c[a] += o.c[a];
    return r;
}

Site Site::operator-(const Site& o) const {
    Site r = *this;
    for (int a = 0; a < dim; ++a) r.c[a] -= o.c[a];
    return r;
}

Site Site::operator-() const {
    Site r = *this;
    for (int a = 0; a < dim; ++a) r.c[a] = -r.c[a];
    return r;
}

Site Site::operator*(int k) const {
    Site r = *this;
    for (int a = 0; a < dim; ++a) r.c[a] *= k;
    return r;
}

Site& Site::operator+=(const Site& o) {
    for (int a = 0; a < dim; ++a) c[a] += o.c[a];
    return *this;
}

std::strong_ordering Site::operator<=>(const Site& o) const {
    if (auto cmp = dim <=> o.dim; cmp != 0) return cmp;
    for (int a = 0; a < dim; ++a)
        if (auto cmp = c[a] <=> o.c[a]; cmp != 0) return cmp;
    return std::strong_ordering::equal;
}

long Site::dot(const Site& o) const {
    long s = 0;
    for (int a = 0; a < dim; ++a) s += static_cast<long>(c[a]) * o.c[a];
    return s;
}

std::string Site::str() const {
    if (dim == 1) return std::to_string(c[0]);
    std::string s = "(";
    for (int a = 0; a < dim; ++a) {
        if (a) s += ",";
        s += std::to_string(c[a]);
    }
    return s + ")";
}

std::size_t SiteHash::operator()(const Site& s) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(s.dim + 1);
    for (int a = 0; a < s.dim; ++a) h = splitmix64(h ^ static_cast<std::uint32_t>(s.c[a]));
    return static_cast<std::size_t>(h);
}

Site parseSite(int dim, const std::string& text) {
    std::string t;
    for (char ch : text)
        if (ch != '(' && ch != ')' && ch != ' ') t += ch;
    std::vector<int> v;
    std::stringstream ss(t);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            v.push_back(std::stoi(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ArgumentError("malformed site '" + text + "'");
        }
    }
    if (static_cast<int>(v.size()) != dim)
        throw ArgumentError("site '" + text + "' does not have " + std::to_string(dim) + " coordinates");
    return Site::fromVector(v);
}

std::string Direction::str() const {
    return (sign > 0 ? "+" : "-") + std::to_string(axis + 1);
}

Direction Direction::parse(const std::string& text) {
    if (text.size() < 2 || (text[0] != '+' && text[0] != '-'))
        throw ArgumentError("malformed direction '" + text + "'");
    int a = 0;
    try {
        a = std::stoi(text.substr(1));
    } catch (const std::exception&) {
        throw ArgumentError("malformed direction '" + text + "'");
    }
    if (a < 1) throw ArgumentError("malformed direction '" + text + "'");
    return {a - 1, text[0] == '+' ? 1 : -1};
}

bool Box::contains(const Site& s) const {
    for (int a = 0; a < lo.dim; ++a)
        if (s[a] < lo[a] || s[a] > hi[a]) return false;
    return true;
}

std::size_t Box::size() const {
    std::size_t n = 1;
    for (int a = 0; a < lo.dim; ++a) {
        if (hi[a] < lo[a]) return 0;
        n *= static_cast<std::size_t>(hi[a] - lo[a] + 1);
    }
    return n;
}

std::vector<Site> Box::sites() const {
    std::vector<Site> out;
    if (size() == 0) return out;
    out.reserve(size());
    Site s = lo;
    while (true) {
        out.push_back(s);
        int a = lo.dim - 1;
        while (a >= 0 && s[a] == hi[a]) {
            s[a] = lo[a];
            --a;
        }
        if (a < 0) break;
        ++s[a];
    }
    return out;
}

Box Box::cube(int d, int from, int to) {
    Box b{Site(d), Site(d)};
    for (int a = 0; a < d; ++a) {
        b.lo[a] = from;
        b.hi[a] = to;
    }
    return b;
}

Box Box::hull(const Site& s) const {
    Box b = *this;
    for (int a = 0; a < lo.dim; ++a) {
        b.lo[a] = std::min(b.lo[a], s[a]);
        b.hi[a] = std::max(b.hi[a], s[a]);
    }
    return b;
}

std::string boundaryName(Boundary b) {
    switch (b) {
    case Boundary::Empty: return "empty";
    case Boundary::Occupied: return "occupied";
    case Boundary::Periodic: return "periodic";
    }
    return "?";
}

Boundary parseBoundary(const std::string& name) {
    if (name == "empty") return Boundary::Empty;
    if (name == "occupied") return Boundary::Occupied;
    if (name == "periodic" || name == "torus") return Boundary::Periodic;
    throw ArgumentError("unknown boundary mode '" + name + "'");
}

Domain::Domain(int dim, int L, Boundary b) : Domain(std::vector<int>(dim, L), b) {}

Domain::Domain(std::vector<int> extent, Boundary b) : boundary_(b) {
    dim_ = static_cast<int>(extent.size());
    if (dim_ < 1 || dim_ > kMaxDim) throw ArgumentError("dimension must be in 1.." + std::to_string(kMaxDim));
    size_ = 1;
    for (int a = dim_ - 1; a >= 0; --a) {
        if (extent[a] < 1) throw ArgumentError("extent must be >= 1");
        extent_[a] = extent[a];
        stride_[a] = static_cast<int>(size_);
        size_ *= static_cast<std::size_t>(extent[a]);
    }
}

bool Domain::inBox(const Site& s) const {
    for (int a = 0; a < dim_; ++a)
        if (s[a] < 1 || s[a] > extent_[a]) return false;
    return true;
}

int Domain::index(const Site& s) const {
    if (s.dim != dim_ || !inBox(s)) throw DomainError("site " + s.str() + " outside the domain");
    int i = 0;
    for (int a = 0; a < dim_; ++a) i += (s[a] - 1) * stride_[a];
    return i;
}

Site Domain::site(int index) const {
    Site s(dim_);
    for (int a = 0; a < dim_; ++a) {
        s[a] = index / stride_[a] + 1;
        index %= stride_[a];
    }
    return s;
}

int Domain::resolve(const Site& s) const {
    if (boundary_ == Boundary::Periodic) {
        int i = 0;
        for (int a = 0; a < dim_; ++a) {
            int v = ((s[a] - 1) % extent_[a] + extent_[a]) % extent_[a];
            i += v * stride_[a];
        }
        return i;
    }
    if (!inBox(s)) return -1;
    int i = 0;
    for (int a = 0; a < dim_; ++a) i += (s[a] - 1) * stride_[a];
    return i;
}

bool Domain::onBoundary(const Site& s) const {
    if (!inBox(s)) return false;
    for (int a = 0; a < dim_; ++a)
        if (s[a] == 1 || s[a] == extent_[a]) return true;
    return false;
}

Box Domain::box() const {
    Box b{Site(dim_), Site(dim_)};
    for (int a = 0; a < dim_; ++a) {
        b.lo[a] = 1;
        b.hi[a] = extent_[a];
    }
    return b;
}

bool Domain::operator==(const Domain& o) const {
    return dim_ == o.dim_ && extent_ == o.extent_ && boundary_ == o.boundary_;
}

Configuration::Configuration(Domain dom, int fillValue)
    : dom_(std::move(dom)), occ_(dom_.size(), static_cast<std::uint8_t>(fillValue ? 1 : 0)),
      vacancies_(fillValue ? 0 : dom_.size()) {}

Configuration Configuration::fromBits(Domain dom, const std::string& bits) {
    if (bits.size() != dom.size())
        throw ArgumentError("bit string length " + std::to_string(bits.size()) + " does not match domain size " +
                            std::to_string(dom.size()));
    Configuration c(std::move(dom), 1);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != '0' && bits[i] != '1') throw ArgumentError("bit string may only contain 0 and 1");
        c.setIndex(static_cast<int>(i), bits[i] - '0');
    }
    return c;
}

Configuration Configuration::withVacancies(Domain dom, const std::vector<Site>& empty) {
    Configuration c(std::move(dom), 1);
    for (const Site& s : empty) c.setIndex(c.dom_.index(s), 0);
    return c;
}

int Configuration::at(const Site& s) const {
    int i = dom_.resolve(s);
    return i < 0 ? dom_.fill() : occ_[i];
}

std::vector<Site> Configuration::vacancies() const {
    std::vector<Site> v;
    for (std::size_t i = 0; i < occ_.size(); ++i)
        if (!occ_[i]) v.push_back(dom_.site(static_cast<int>(i)));
    return v;
}

std::string Configuration::str() const {
    std::string s(occ_.size(), '1');
    for (std::size_t i = 0; i < occ_.size(); ++i) s[i] = occ_[i] ? '1' : '0';
    return s;
}

void Configuration::setIndex(int i, int v) {
    std::uint8_t nv = v ? 1 : 0;
    if (occ_[i] == nv) return;
    vacancies_ += nv ? std::size_t(-1) : 1;
    occ_[i] = nv;
}

void Configuration::swapIndices(int i, int j) { std::swap(occ_[i], occ_[j]); }

namespace {
int resolveOrThrow(const Domain& d, const Site& s) {
    int i = d.resolve(s);
    if (i < 0) throw DomainError("site " + s.str() + " outside the domain");
    return i;
}
} // namespace

Configuration exchange(const Configuration& c, const Site& x, const Site& y) {
    int i = resolveOrThrow(c.domain(), x), j = resolveOrThrow(c.domain(), y);
    if (i == j) throw ArgumentError("exchange needs two distinct sites");
    Configuration r = c;
    r.swapIndices(i, j);
    return r;
}

Configuration flip(const Configuration& c, const Site& x) {
    Configuration r = c;
    r.flipIndex(resolveOrThrow(c.domain(), x));
    return r;
}

Configuration applyPermutation(const Configuration& c, const FinitePermutation& sigma) {
    Configuration r = c;
    for (const auto& [y, img] : sigma.mapping()) {
        int from = resolveOrThrow(c.domain(), y), to = resolveOrThrow(c.domain(), img);
        r.setIndex(to, c.atIndex(from));
    }
    return r;
}

FinitePermutation FinitePermutation::transposition(const Site& a, const Site& b) {
    return cycle({a, b});
}

FinitePermutation FinitePermutation::cycle(const std::vector<Site>& sites) {
    if (sites.size() < 2) throw ArgumentError("a cycle needs at least two sites");
    std::set<Site> seen(sites.begin(), sites.end());
    if (seen.size() != sites.size()) throw ArgumentError("cycle sites must be pairwise distinct");
    FinitePermutation p;
    for (std::size_t k = 0; k < sites.size(); ++k) p.set(sites[k], sites[(k + 1) % sites.size()]);
    return p;
}

FinitePermutation FinitePermutation::fromMapping(const std::map<Site, Site>& m) {
    FinitePermutation p;
    std::set<Site> images;
    for (const auto& [y, img] : m) {
        if (!images.insert(img).second) throw ArgumentError("mapping is not injective");
    }
    for (const auto& [y, img] : m)
        if (!m.count(img) && !(img == y)) {
            // image must be in the domain of the finite map for a bijection of the support
            throw ArgumentError("mapping does not close on its support");
        }
    for (const auto& [y, img] : m) p.set(y, img);
    return p;
}

void FinitePermutation::set(const Site& y, const Site& img) {
    if (y == img) {
        fwd_.erase(y);
        inv_.erase(y);
        return;
    }
    fwd_[y] = img;
    inv_[img] = y;
}

Site FinitePermutation::operator()(const Site& y) const {
    auto it = fwd_.find(y);
    return it == fwd_.end() ? y : it->second;
}

Site FinitePermutation::preimage(const Site& y) const {
    auto it = inv_.find(y);
    return it == inv_.end() ? y : it->second;
}

FinitePermutation FinitePermutation::inverse() const {
    FinitePermutation p;
    p.fwd_ = inv_;
    p.inv_ = fwd_;
    return p;
}

FinitePermutation FinitePermutation::conjugatedBy(const Site& z) const {
    FinitePermutation p;
    for (const auto& [y, img] : fwd_) {
        p.fwd_[y + z] = img + z;
        p.inv_[img + z] = y + z;
    }
    return p;
}

void FinitePermutation::leftMultiply(const Site& a, const Site& b) {
    if (a == b) return;
    Site ya = preimage(a), yb = preimage(b);
    // Clear stale entries first so set() keeps both maps consistent.
    fwd_.erase(ya);
    fwd_.erase(yb);
    inv_.erase(a);
    inv_.erase(b);
    set(ya, b);
    set(yb, a);
}

std::vector<Site> FinitePermutation::support() const {
    std::vector<Site> s;
    for (const auto& kv : fwd_) s.push_back(kv.first);
    return s;
}

std::vector<std::vector<Site>> FinitePermutation::cycles() const {
    std::vector<std::vector<Site>> out;
    std::set<Site> done;
    for (const auto& [start, img] : fwd_) {
        if (done.count(start)) continue;
        std::vector<Site> cyc{start};
        done.insert(start);
        for (Site y = img; !(y == start); y = (*this)(y)) {
            cyc.push_back(y);
            done.insert(y);
        }
        out.push_back(std::move(cyc));
    }
    return out;
}

std::string FinitePermutation::str() const {
    if (fwd_.empty()) return "()";
    std::string s;
    for (const auto& cyc : cycles()) {
        s += "(";
        for (std::size_t k = 0; k < cyc.size(); ++k) {
            if (k) s += ",";
            s += cyc[k].str();
        }
        s += ")";
    }
    return s;
}

FinitePermutation FinitePermutation::parse(int dim, const std::string& text) {
    // Cycle notation; in d>1 each site is itself parenthesised.
    FinitePermutation p;
    std::size_t i = 0;
    auto skip = [&] {
        while (i < text.size() && text[i] == ' ') ++i;
    };
    skip();
    if (text.substr(i) == "()" || i == text.size()) return p;
    while (i < text.size()) {
        skip();
        if (i >= text.size()) break;
        if (text[i] != '(') throw ArgumentError("malformed permutation '" + text + "'");
        ++i;
        std::vector<Site> cyc;
        while (true) {
            skip();
            std::size_t start = i;
            if (dim > 1) {
                if (i >= text.size() || text[i] != '(') throw ArgumentError("malformed permutation '" + text + "'");
                i = text.find(')', i);
                if (i == std::string::npos) throw ArgumentError("malformed permutation '" + text + "'");
                ++i;
            } else {
                while (i < text.size() && text[i] != ',' && text[i] != ')') ++i;
            }
            cyc.push_back(parseSite(dim, text.substr(start, i - start)));
            skip();
            if (i >= text.size()) throw ArgumentError("malformed permutation '" + text + "'");
            if (text[i] == ',') {
                ++i;
                continue;
            }
            if (text[i] == ')') {
                ++i;
                break;
            }
            throw ArgumentError("malformed permutation '" + text + "'");
        }
        p = compose(cycleFromSites(cyc), p);
    }
    return p;
}

FinitePermutation compose(const FinitePermutation& sigma2, const FinitePermutation& sigma1) {
    std::map<Site, Site> m;
    for (const auto& [y, img] : sigma1.mapping()) m[y] = sigma2(img);
    for (const auto& [y, img] : sigma2.mapping())
        if (!m.count(y) && sigma1(y) == y) m[y] = img;
    std::map<Site, Site> clean;
    for (const auto& [y, img] : m)
        if (!(y == img)) clean[y] = img;
    return FinitePermutation::fromMapping(clean);
}

FinitePermutation cycleFromSites(const std::vector<Site>& sites) { return FinitePermutation::cycle(sites); }

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng makeRng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

void fillEquilibrium(Configuration& c, double q, Rng& rng) {
    if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("q must lie in [0,1]");
    for (std::size_t i = 0; i < c.size(); ++i) c.setIndex(static_cast<int>(i), uniform01(rng) < q ? 0 : 1);
}

Configuration sampleEquilibrium(const Domain& dom, double q, std::uint64_t seed) {
    if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("q must lie in [0,1]");
    Configuration c(dom, 1);
    Rng rng = makeRng(seed);
    fillEquilibrium(c, q, rng);
    return c;
}

Configuration sampleFixedVacancies(const Domain& dom, std::size_t k, std::uint64_t seed) {
    if (k > dom.size()) throw ArgumentError("vacancy count exceeds domain size");
    std::vector<int> idx(dom.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = makeRng(seed);
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    Configuration c(dom, 1);
    for (std::size_t i = 0; i < k; ++i) c.setIndex(idx[i], 0);
    return c;
}

} // namespace kclg
