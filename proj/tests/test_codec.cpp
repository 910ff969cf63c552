#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "ctxsr/codec.hpp"
#include "ctxsr/error.hpp"
#include "ctxsr/image_io.hpp"
#include "ctxsr/rng.hpp"
#include "support.hpp"

using namespace ctxsr;

namespace {

Tensor random_grid_image(Shape s, Rng& rng) {
    std::uniform_int_distribution<int> level(0, 255);
    Tensor t(std::move(s));
    for (double& v : t.values()) v = image_io::level_value(level(rng));
    return t;
}

}  // namespace

TEST_CASE("shapes and the midpoint") {
    const auto z = codec::encode(Tensor({1, 3, 8, 8}, 0.5), 2);
    CHECK(z.data.shape() == Shape{1, 12, 4, 4});
    for (double v : z.data.values()) CHECK(v == 0.0);
    const Tensor img = codec::decode({Tensor({1, 12, 4, 4}), 2});
    for (double v : img.values()) CHECK(v == 0.5);
}

TEST_CASE("single patch decodes in raster order") {
    // Brute-force the index map: entry c*4 + dy*2 + dx lands at pixel (dy, dx) of channel c.
    Tensor z({1, 12, 1, 1});
    for (int64_t k = 0; k < 12; ++k) z[k] = -1.0 + 2.0 * static_cast<double>(k) / 11.0;
    const Tensor img = codec::decode({z, 2});
    REQUIRE(img.shape() == Shape{1, 3, 2, 2});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx)
                CHECK(img.at(0, c, dy, dx) == doctest::Approx((z[c * 4 + dy * 2 + dx] + 1.0) / 2.0).epsilon(1e-15));
}

TEST_CASE("decode inverts encode bit exactly on the pixel grid") {
    Rng rng(21);
    for (int p : {1, 2, 4}) {
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor x = random_grid_image({2, 3, 8, 8}, rng);
            CHECK(codec::decode(codec::encode(x, p)) == x);
        }
    }
}

TEST_CASE("encode is affine") {
    Rng rng(3);
    const Tensor x = rand_uniform({1, 3, 4, 4}, rng, 0, 1), y = rand_uniform({1, 3, 4, 4}, rng, 0, 1);
    Tensor mix(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) mix[i] = 0.25 * x[i] + 0.75 * y[i];
    const Tensor zx = codec::encode(x).data, zy = codec::encode(y).data, zm = codec::encode(mix).data;
    // weights sum to 1, so the offset cancels
    for (int64_t i = 0; i < zm.numel(); ++i) CHECK(zm[i] == doctest::Approx(0.25 * zx[i] + 0.75 * zy[i]).epsilon(1e-14));
}

TEST_CASE("clip and shape errors") {
    Tensor z({1, 12, 1, 1}, 3.0);
    const Tensor img = codec::decode({z, 2}, true);
    for (double v : img.values()) CHECK(v == 1.0);
    CHECK_THROWS_AS(codec::encode(Tensor({1, 3, 5, 4}), 2), DimensionError);
    CHECK_THROWS_AS(codec::decode({Tensor({1, 10, 2, 2}), 2}), DimensionError);
}

TEST_CASE("PPM round trip is bit exact") {
    test_support::TempDir dir("ppm");
    Rng rng(8);
    const Tensor x = random_grid_image({1, 3, 5, 7}, rng);
    image_io::write_ppm(dir.path() / "x.ppm", x);
    CHECK(image_io::read_ppm(dir.path() / "x.ppm") == x);
}

TEST_CASE("malformed PPM names the file") {
    test_support::TempDir dir("badppm");
    const auto path = dir.path() / "bad.ppm";
    std::ofstream(path) << "P6\n4 4\n255\nxx";
    try {
        image_io::read_ppm(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("bad.ppm") != std::string::npos);
    }
}
