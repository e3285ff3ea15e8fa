#include <catch2/catch_amalgamated.hpp>

#include "csds/imaging.hpp"
#include "csds/rng.hpp"

using namespace csds;

namespace {

Tensor rgb_image(int h, int w, Rng& rng) {
    Tensor t({3, h, w});
    for (auto& v : t.data()) v = rng.uniform();
    return t;
}

} // namespace

TEST_CASE("channel_variance_map oracles") {
    SECTION("constant channels give zero") {
        Tensor img = Tensor::full({3, 2, 2}, 0.5f);
        ScalarMap v = channel_variance_map(img);
        for (float x : v.values) REQUIRE(x == 0.0f);
    }
    SECTION("pixel (1,0,0) gives 2/9") {
        Tensor img({3, 1, 1});
        img[0] = 1.0f;
        ScalarMap v = channel_variance_map(img);
        REQUIRE_THAT(v.values[0], Catch::Matchers::WithinAbs(2.0 / 9.0, 1e-6));
    }
    SECTION("grayscale image gives all-zero map") {
        Rng rng(1);
        Tensor img({3, 4, 4});
        for (int i = 0; i < 16; ++i) {
            float g = rng.uniform();
            img[i] = img[16 + i] = img[32 + i] = g;
        }
        ScalarMap v = channel_variance_map(img);
        for (float x : v.values) REQUIRE_THAT(x, Catch::Matchers::WithinAbs(0.0, 1e-7));
    }
    SECTION("invariant under channel permutation") {
        Rng rng(2);
        Tensor img = rgb_image(3, 3, rng);
        Tensor perm({3, 3, 3});
        std::size_t plane = 9;
        for (std::size_t i = 0; i < plane; ++i) {
            perm[i] = img[2 * plane + i];
            perm[plane + i] = img[i];
            perm[2 * plane + i] = img[plane + i];
        }
        ScalarMap a = channel_variance_map(img), b = channel_variance_map(perm);
        for (std::size_t i = 0; i < a.size(); ++i)
            REQUIRE_THAT(a.values[i], Catch::Matchers::WithinAbs(b.values[i], 1e-7));
    }
    SECTION("wrong channel count rejected") {
        REQUIRE_THROWS_AS(channel_variance_map(Tensor({1, 2, 2})), DimensionError);
    }
}

TEST_CASE("smooth") {
    SECTION("constant map unchanged under both kernels") {
        ScalarMap m(5, 5, 0.37f);
        for (SmoothMode mode : {SmoothMode::Gaussian3x3, SmoothMode::AvgPool3x3}) {
            ScalarMap s = smooth(m, mode);
            for (float v : s.values) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.37, 1e-6));
        }
    }
    SECTION("impulse under avgpool gives 1/9 patch") {
        ScalarMap m(5, 5);
        m.at(2, 2) = 1.0f;
        ScalarMap s = smooth(m, SmoothMode::AvgPool3x3);
        for (int y = 1; y <= 3; ++y)
            for (int x = 1; x <= 3; ++x)
                REQUIRE_THAT(s.at(y, x), Catch::Matchers::WithinAbs(1.0 / 9.0, 1e-6));
        REQUIRE(s.at(0, 0) == 0.0f);
    }
    SECTION("interior mean preserved") {
        Rng rng(3);
        ScalarMap m(11, 11);
        for (auto& v : m.values) v = rng.uniform();
        ScalarMap s = smooth(m, SmoothMode::AvgPool3x3);
        // avgpool over the interior is a rearrangement of interior sums
        double before = 0.0, after = 0.0;
        for (int y = 3; y < 8; ++y)
            for (int x = 3; x < 8; ++x) after += s.at(y, x);
        for (int y = 2; y < 9; ++y)
            for (int x = 2; x < 9; ++x) before += m.at(y, x);
        REQUIRE(after <= before + 1e-5);
    }
}

TEST_CASE("normalize_max") {
    SECTION("derived division") {
        ScalarMap m(1, 2);
        m.values = {2.0f, 4.0f};
        ScalarMap n = normalize_max(m);
        REQUIRE_THAT(n.values[0], Catch::Matchers::WithinAbs(0.5, 1e-6));
        REQUIRE_THAT(n.values[1], Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
    SECTION("all-zero stays all-zero") {
        ScalarMap m(2, 2);
        ScalarMap n = normalize_max(m);
        for (float v : n.values) REQUIRE(v == 0.0f);
    }
    SECTION("idempotent up to the eps factor") {
        ScalarMap m(1, 3);
        m.values = {1.0f, 2.0f, 3.0f};
        ScalarMap once = normalize_max(m, 1e-8f);
        ScalarMap twice = normalize_max(once, 1e-8f);
        for (std::size_t i = 0; i < m.size(); ++i)
            REQUIRE_THAT(twice.values[i], Catch::Matchers::WithinAbs(once.values[i], 1e-5));
    }
}

TEST_CASE("threshold_mask boundary behavior") {
    ScalarMap m(1, 3);
    m.values = {0.6f, 0.5f, 0.4f};
    BinaryMask b = threshold_mask(m, 0.5f);
    REQUIRE(b.values[0] == 1);  // strict >
    REQUIRE(b.values[1] == 0);
    REQUIRE(b.values[2] == 0);

    ScalarMap norm(1, 2);
    norm.values = {0.3f, 1.0f};
    BinaryMask none = threshold_mask(norm, 1.0f);
    REQUIRE(none.values[0] == 0);
    REQUIRE(none.values[1] == 0);

    REQUIRE_THROWS_AS(threshold_mask(m, 1.5f), ConfigError);
}

TEST_CASE("threshold at zero marks exactly the nonzero pixels") {
    Rng rng(4);
    ScalarMap m(6, 6);
    for (auto& v : m.values) v = rng.coin() ? rng.uniform(0.01f, 1.0f) : 0.0f;
    BinaryMask b = threshold_mask(normalize_max(m), 0.0f);
    for (std::size_t i = 0; i < m.size(); ++i)
        REQUIRE(static_cast<bool>(b.values[i]) == (m.values[i] > 0.0f));
}

TEST_CASE("edge_magnitude_map oracles") {
    SECTION("constant image gives all-zero map") {
        Tensor img = Tensor::full({3, 4, 4}, 0.8f);
        ScalarMap e = edge_magnitude_map(img);
        for (float v : e.values) REQUIRE(v == 0.0f);
    }
    SECTION("single-channel column step: raw E = 1/3 at the step") {
        int h = 4, w = 6;
        Tensor img = Tensor::full({3, h, w}, 0.2f);
        std::size_t plane = static_cast<std::size_t>(h) * w;
        // red channel steps from 0 to 1 between columns 2 and 3
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) img[static_cast<std::size_t>(y) * w + x] = x >= 3 ? 1.0f : 0.0f;
        (void)plane;
        ScalarMap raw = edge_magnitude_raw(img);
        for (int y = 0; y < h; ++y) {
            REQUIRE_THAT(raw.at(y, 2), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-6));
            REQUIRE_THAT(raw.at(y, 0), Catch::Matchers::WithinAbs(0.0, 1e-6));
            REQUIRE_THAT(raw.at(y, 4), Catch::Matchers::WithinAbs(0.0, 1e-6));
        }
        ScalarMap norm = edge_magnitude_map(img);
        for (int y = 0; y < h; ++y)
            REQUIRE_THAT(norm.at(y, 2), Catch::Matchers::WithinAbs(1.0, 1e-5));
    }
    SECTION("replicate padding: last column has zero horizontal difference") {
        Rng rng(5);
        Tensor img = rgb_image(1, 5, rng);  // single row -> vertical term is zero
        ScalarMap raw = edge_magnitude_raw(img);
        REQUIRE(raw.at(0, 4) == 0.0f);
    }
    SECTION("horizontal flip relocates edges symmetrically") {
        int h = 5, w = 6;
        // constant rows, so only the horizontal term contributes
        Tensor img = Tensor::full({3, h, w}, 0.1f);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 4; x < w; ++x)
                    img[(static_cast<std::size_t>(c) * h + y) * w + x] = 0.9f;
        Tensor flipped({3, h, w});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    flipped[(static_cast<std::size_t>(c) * h + y) * w + x] =
                        img[(static_cast<std::size_t>(c) * h + y) * w + (w - 1 - x)];
        ScalarMap a = edge_magnitude_raw(img), b = edge_magnitude_raw(flipped);
        // G_h(x) of the flip equals G_h(w-2-x) of the original for x < w-1
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w - 1; ++x)
                REQUIRE_THAT(b.at(y, x), Catch::Matchers::WithinAbs(a.at(y, w - 2 - x), 1e-6));
        double sa = 0.0, sb = 0.0;
        for (float v : a.values) sa += v;
        for (float v : b.values) sb += v;
        REQUIRE_THAT(sa, Catch::Matchers::WithinAbs(sb, 1e-4));
    }
}
