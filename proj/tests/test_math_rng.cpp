#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "alignlab/math.hpp"
#include "alignlab/rng.hpp"

using namespace alignlab;

TEST_CASE("log_sum_exp matches direct computation and survives large inputs") {
    CHECK(log_sum_exp({0.0, 0.0}) == Catch::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(log_sum_exp({1000.0, 1000.0}) == Catch::Approx(1000.0 + std::log(2.0)).epsilon(1e-14));
    CHECK(log_sum_exp({-745.0, 0.0}) == Catch::Approx(std::log(1.0 + std::exp(-745.0))));
}

TEST_CASE("softmax basics") {
    auto p = softmax({0.0, 0.0, 0.0, 0.0});
    for (double v : p) CHECK(v == Catch::Approx(0.25).margin(1e-15));

    auto q = softmax({1.0, 0.0});
    CHECK(q[0] == Catch::Approx(0.7311).margin(1e-4));
    CHECK(q[1] == Catch::Approx(0.2689).margin(1e-4));

    // shift invariance
    auto shifted = softmax({1.0 + 42.0, 0.0 + 42.0});
    CHECK(std::fabs(q[0] - shifted[0]) < 1e-12);
}

TEST_CASE("sigmoid identities") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(log_sigmoid(0.0) == Catch::Approx(-std::log(2.0)).epsilon(1e-14));
    CHECK(-log_sigmoid(1.0) == Catch::Approx(0.313262).margin(1e-6));
    CHECK(sigmoid(2.0) == Catch::Approx(0.8807970779778823).epsilon(1e-12));
}

TEST_CASE("kl_divergence is zero on identical distributions") {
    std::vector<double> p{0.2, 0.3, 0.5};
    CHECK(kl_divergence(p, p) == Catch::Approx(0.0).margin(1e-15));
    CHECK(kl_divergence({0.8, 0.2}, {0.5, 0.5}) == Catch::Approx(0.19274475702175742).margin(1e-10));
}

TEST_CASE("argmax ties break to the lowest index") {
    CHECK(argmax_lowest({0.5, 0.5, -1.0}) == 0);
    CHECK(argmax_lowest({-1.0, 2.0, 2.0}) == 1);
}

TEST_CASE("rng streams are deterministic and name-separated") {
    Rng a = substream(7, "datagen");
    Rng b = substream(7, "datagen");
    Rng c = substream(7, "rollout");
    for (int i = 0; i < 16; ++i) {
        auto x = a.next_u64();
        CHECK(x == b.next_u64());
        (void)c;
    }
    Rng c1 = substream(7, "rollout");
    Rng c2 = substream(8, "rollout");
    CHECK(c1.next_u64() != c2.next_u64());
}

TEST_CASE("uniform01 lands in [0,1) and categorical respects the CDF") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    std::vector<double> probs{0.0, 1.0, 0.0};
    for (int i = 0; i < 50; ++i) CHECK(rng.categorical(probs) == 1);
}
