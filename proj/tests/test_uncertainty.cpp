#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "csds/rng.hpp"
#include "csds/uncertainty.hpp"

using namespace csds;

TEST_CASE("entropy_map oracles") {
    SECTION("uniform binary distribution gives ln 2") {
        Tensor p = Tensor::full({2, 2, 2}, 0.5f);
        UncertaintyMap u = entropy_map(p);
        for (float v : u.values)
            REQUIRE_THAT(v, Catch::Matchers::WithinAbs(std::log(2.0), 1e-5));
        REQUIRE(u.stage == UncertaintyStage::Base);
    }
    SECTION("one-hot gives ~0") {
        Tensor p({2, 1, 1});
        p[0] = 1.0f;
        UncertaintyMap u = entropy_map(p);
        REQUIRE(std::fabs(u.values[0]) < 1e-6f);
    }
    SECTION("(0.8, 0.2) gives 0.5004") {
        Tensor p = Tensor::from_data({2, 1, 1}, {0.8f, 0.2f});
        UncertaintyMap u = entropy_map(p);
        REQUIRE_THAT(u.values[0], Catch::Matchers::WithinAbs(0.5004, 1e-4));
    }
    SECTION("negative probability rejected") {
        Tensor p = Tensor::from_data({2, 1, 1}, {-0.1f, 1.1f});
        REQUIRE_THROWS_AS(entropy_map(p), NumericError);
    }
    SECTION("bounded by ln C plus eps slack") {
        Rng rng(1);
        for (int trial = 0; trial < 50; ++trial) {
            int c = rng.uniform_int(2, 5);
            Tensor logits({c, 3, 3});
            for (auto& v : logits.data()) v = rng.uniform(-8.0f, 8.0f);
            UncertaintyMap u = entropy_map(softmax_channel(logits));
            float bound = std::log(static_cast<float>(c)) + static_cast<float>(c) * 1e-8f + 1e-6f;
            for (float v : u.values) {
                REQUIRE(v >= 0.0f);
                REQUIRE(v <= bound);
            }
        }
    }
}

TEST_CASE("modulate") {
    UncertaintyMap u;
    u.height = 1;
    u.width = 2;
    u.values = {0.6f, 0.3f};
    BinaryMask m(1, 2);
    m.values = {1, 0};

    SECTION("lambda 0 is exact identity") {
        UncertaintyMap out = modulate(u, m, 0.0f);
        REQUIRE(out.values[0] == u.values[0]);
        REQUIRE(out.values[1] == u.values[1]);
        REQUIRE(out.stage == UncertaintyStage::ColorModulated);
    }
    SECTION("derived value 0.6 * 1.5 = 0.9") {
        UncertaintyMap out = modulate(u, m, 0.5f);
        REQUIRE_THAT(out.values[0], Catch::Matchers::WithinAbs(0.9, 1e-6));
        REQUIRE(out.values[1] == u.values[1]);  // mask 0 unchanged
    }
    SECTION("all-zero mask is identity") {
        BinaryMask zero(1, 2);
        UncertaintyMap out = modulate(u, zero, 1.0f);
        REQUIRE(out.values[0] == u.values[0]);
        REQUIRE(out.values[1] == u.values[1]);
    }
    SECTION("errors") {
        REQUIRE_THROWS_AS(modulate(u, m, 1.5f), ConfigError);
        REQUIRE_THROWS_AS(modulate(u, BinaryMask(2, 2), 0.5f), DimensionError);
    }
}

TEST_CASE("csds_uncertainty composition") {
    UncertaintyConfig cfg;

    SECTION("zero lambdas give the base entropy in both maps") {
        cfg.lambda_color = cfg.lambda_structure = 0.0f;
        Rng rng(2);
        Tensor logits({2, 4, 4});
        for (auto& v : logits.data()) v = rng.uniform(-2.0f, 2.0f);
        Tensor img({3, 4, 4});
        for (auto& v : img.data()) v = rng.uniform();
        auto [color, structure] = csds_uncertainty(logits, img, cfg);
        UncertaintyMap base = entropy_map(softmax_channel(logits), cfg.eps);
        for (std::size_t i = 0; i < base.size(); ++i) {
            REQUIRE(color.values[i] == base.values[i]);
            REQUIRE(structure.values[i] == base.values[i]);
        }
    }
    SECTION("constant grayscale image leaves both masks empty") {
        cfg.lambda_color = cfg.lambda_structure = 1.0f;
        Tensor logits = Tensor::full({2, 4, 4}, 0.3f);
        Tensor img = Tensor::full({3, 4, 4}, 0.5f);
        auto [color, structure] = csds_uncertainty(logits, img, cfg);
        for (float v : color.values)
            REQUIRE_THAT(v, Catch::Matchers::WithinAbs(std::log(2.0), 1e-5));
        for (float v : structure.values)
            REQUIRE_THAT(v, Catch::Matchers::WithinAbs(std::log(2.0), 1e-5));
    }
    SECTION("full masks with lambda 1 quadruple ln 2") {
        cfg.lambda_color = cfg.lambda_structure = 1.0f;
        cfg.tau_color = cfg.tau_structure = 0.0f;
        Tensor logits({2, 4, 4});  // uniform
        Rng rng(3);
        Tensor img({3, 4, 4});
        for (auto& v : img.data()) v = rng.uniform(0.05f, 0.95f);
        auto [color, structure] = csds_uncertainty(logits, img, cfg);
        // random image: the variance map is positive a.e., tau = 0 -> full color mask
        for (float v : color.values)
            REQUIRE_THAT(v, Catch::Matchers::WithinAbs(2.0 * std::log(2.0), 1e-4));
        // replicate padding zeroes both differences at the bottom-right corner,
        // so the strict threshold keeps that one pixel out of the structure mask
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                double expected = (y == 3 && x == 3) ? 2.0 * std::log(2.0) : 4.0 * std::log(2.0);
                REQUIRE_THAT(structure.values[y * 4 + x],
                             Catch::Matchers::WithinAbs(expected, 1e-4));
            }
    }
    SECTION("pointwise monotonicity: structure >= color >= base") {
        Rng rng(4);
        for (int trial = 0; trial < 10; ++trial) {
            Tensor logits({2, 6, 6});
            for (auto& v : logits.data()) v = rng.uniform(-3.0f, 3.0f);
            Tensor img({3, 6, 6});
            for (auto& v : img.data()) v = rng.uniform();
            auto [color, structure] = csds_uncertainty(logits, img, cfg);
            UncertaintyMap base = entropy_map(softmax_channel(logits), cfg.eps);
            for (std::size_t i = 0; i < base.size(); ++i) {
                REQUIRE(structure.values[i] >= color.values[i]);
                REQUIRE(color.values[i] >= base.values[i]);
                REQUIRE(color.values[i] <= base.values[i] * (1.0f + cfg.lambda_color) + 1e-6f);
                REQUIRE(structure.values[i] <=
                        color.values[i] * (1.0f + cfg.lambda_structure) + 1e-6f);
            }
        }
    }
    SECTION("deterministic given identical inputs") {
        Rng rng(5);
        Tensor logits({2, 4, 4});
        for (auto& v : logits.data()) v = rng.uniform(-1.0f, 1.0f);
        Tensor img({3, 4, 4});
        for (auto& v : img.data()) v = rng.uniform();
        auto [c1, s1] = csds_uncertainty(logits, img, cfg);
        auto [c2, s2] = csds_uncertainty(logits, img, cfg);
        REQUIRE(c1.values == c2.values);
        REQUIRE(s1.values == s2.values);
    }
}

TEST_CASE("to_loss_weight") {
    UncertaintyMap u;
    u.height = 1;
    u.width = 2;

    SECTION("constant map gives all-ones in direct mode") {
        u.values = {0.4f, 0.4f};
        ScalarMap w = to_loss_weight(u, WeightMode::Direct);
        REQUIRE_THAT(w.values[0], Catch::Matchers::WithinAbs(1.0, 1e-6));
        REQUIRE_THAT(w.values[1], Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
    SECTION("zero uncertainty gives 1.0 in inverse_exp mode") {
        u.values = {0.0f, 0.0f};
        ScalarMap w = to_loss_weight(u, WeightMode::InverseExp);
        REQUIRE(w.values[0] == 1.0f);
    }
    SECTION("derived two-pixel direct case {ln2, 0} -> {2, 0}") {
        u.values = {static_cast<float>(std::log(2.0)), 0.0f};
        ScalarMap w = to_loss_weight(u, WeightMode::Direct);
        REQUIRE_THAT(w.values[0], Catch::Matchers::WithinAbs(2.0, 1e-5));
        REQUIRE_THAT(w.values[1], Catch::Matchers::WithinAbs(0.0, 1e-6));
    }
    SECTION("all-zero map degenerates to all-ones") {
        u.values = {0.0f, 0.0f};
        ScalarMap w = to_loss_weight(u, WeightMode::Direct);
        REQUIRE(w.values[0] == 1.0f);
        REQUIRE(w.values[1] == 1.0f);
    }
    SECTION("direct weights have mean 1") {
        Rng rng(6);
        UncertaintyMap r;
        r.height = 4;
        r.width = 4;
        r.values.resize(16);
        for (auto& v : r.values) v = rng.uniform(0.01f, 0.7f);
        ScalarMap w = to_loss_weight(r, WeightMode::Direct);
        double m = 0.0;
        for (float v : w.values) m += v;
        REQUIRE_THAT(m / 16.0, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
}
