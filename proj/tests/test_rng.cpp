#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "emgfed/rng.hpp"

using namespace emgfed;

TEST_SUITE("rng") {

TEST_CASE("same seed gives identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("uniform stays in [0, 1) and covers the range") {
    Rng rng(7);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("gaussian moments are sane") {
    Rng rng(11);
    const int n = 200000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sum_sq += g * g;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sum_sq / n - 1.0) < 0.02);
}

TEST_CASE("uniform_int bounds and coverage") {
    Rng rng(3);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i) {
        const auto v = rng.uniform_int(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("shuffle is a permutation") {
    Rng rng(9);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto shuffled = v;
    rng.shuffle(shuffled);
    auto sorted = shuffled;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == v);
}

TEST_CASE("derive_seed separates purposes and indices") {
    const auto a = derive_seed(123, "sampling", 0);
    const auto b = derive_seed(123, "sampling", 1);
    const auto c = derive_seed(123, "client-steps", 0);
    const auto d = derive_seed(124, "sampling", 0);
    CHECK(a != b);
    CHECK(a != c);
    CHECK(a != d);
    CHECK(a == derive_seed(123, "sampling", 0));
}

}  // TEST_SUITE
