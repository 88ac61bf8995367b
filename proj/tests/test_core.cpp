#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <set>

#include "sgwb/hash.hpp"
#include "sgwb/rng.hpp"

using namespace sgwb;

TEST_CASE("splitmix64 reference vector") {
    // Known sequence for seed 1234567 (Vigna's reference implementation).
    uint64_t s = 1234567;
    CHECK(splitmix64(s) == 0x599ed017fb08fc85ull);
    CHECK(splitmix64(s) == 0x2c73f08458540fa5ull);
    CHECK(splitmix64(s) == 0x883ebce5a3f27c77ull);
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(42);
    Rng f1 = c.fork(1), f2 = c.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());
    // Forking does not disturb the parent.
    Rng d(42);
    d.fork(1);
    d.fork(2);
    Rng e(42);
    CHECK(d.next_u64() == e.next_u64());
}

TEST_CASE("rng save restore round trip") {
    Rng a(7);
    a.normal(); // leaves a Box-Muller spare cached
    auto st = a.save();
    std::vector<double> expect;
    for (int i = 0; i < 10; ++i) expect.push_back(a.normal());
    Rng b(999);
    b.restore(st);
    for (int i = 0; i < 10; ++i) CHECK(b.normal() == expect[size_t(i)]);
}

TEST_CASE("uniform stays in range and fills it") {
    Rng r(3);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 20000; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(lo < 0.01);
    CHECK(hi > 0.99);
}

TEST_CASE("below is unbiased enough and in range") {
    Rng r(5);
    std::array<int, 7> counts{};
    for (int i = 0; i < 70000; ++i) counts[r.below(7)]++;
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("normal moments") {
    Rng r(11);
    double sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    Rng r(13);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    r.shuffle(v);
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == 50);
    Rng r2(13);
    std::vector<int> w(50);
    std::iota(w.begin(), w.end(), 0);
    r2.shuffle(w);
    CHECK(v == w);
}

TEST_CASE("fnv1a known vectors") {
    CHECK(fnv1a("", 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a("foobar", 6) == 0x85944171f73967e8ull);
    CHECK(hex64(0xdeadbeefull) == "00000000deadbeef");
}
