#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "heatrank/error.hpp"
#include "heatrank/heatmap.hpp"
#include "heatrank/rng.hpp"

using namespace heatrank;

namespace {

Heatmap make_map(int h, int w, const std::vector<double>& chans, std::vector<uint8_t> fg = {}) {
    Heatmap m;
    m.values = Tensor({3, h, w}, chans);
    if (fg.empty()) fg.assign(static_cast<size_t>(h) * w, 1);
    m.fg = std::move(fg);
    return m;
}

PooledMap pooled_from(const std::vector<double>& v, int h, int w, Pooling p,
                      std::vector<uint8_t> fg = {}) {
    PooledMap m;
    m.v = v;
    m.h = h;
    m.w = w;
    m.pooling = p;
    m.signed_values = pooling_signed(p);
    if (fg.empty()) fg.assign(v.size(), 1);
    m.fg = std::move(fg);
    return m;
}

// Rank vector of a tie-free sequence, smallest value gets rank 0.
std::vector<int> ranks_of(const std::vector<double>& v) {
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<int> rank(v.size());
    for (size_t r = 0; r < order.size(); ++r) rank[static_cast<size_t>(order[r])] = static_cast<int>(r);
    return rank;
}

}  // namespace

TEST_CASE("channel pooling matches the four formulas") {
    // One pixel with channels (1,2,3).
    Heatmap t = make_map(1, 1, {1.0, 2.0, 3.0});
    CHECK(pool_channels(t, Pooling::mean).v[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(pool_channels(t, Pooling::max).v[0] == doctest::Approx(3.0));
    CHECK(pool_channels(t, Pooling::max_abs).v[0] == doctest::Approx(3.0));
    CHECK(pool_channels(t, Pooling::l2).v[0] == doctest::Approx(std::sqrt(14.0 / 3.0)).epsilon(1e-14));

    // Channels (-3,1,2): mean 0, max 2, max-abs 3, l2 sqrt(14/3).
    Heatmap u = make_map(1, 1, {-3.0, 1.0, 2.0});
    CHECK(pool_channels(u, Pooling::mean).v[0] == doctest::Approx(0.0));
    CHECK(pool_channels(u, Pooling::max).v[0] == doctest::Approx(2.0));
    CHECK(pool_channels(u, Pooling::max_abs).v[0] == doctest::Approx(3.0));
    CHECK(pool_channels(u, Pooling::l2).v[0] == doctest::Approx(std::sqrt(14.0 / 3.0)).epsilon(1e-14));

    // All-equal non-negative channels come back unchanged under every pooling.
    Heatmap e = make_map(1, 1, {0.7, 0.7, 0.7});
    for (Pooling p : {Pooling::mean, Pooling::max, Pooling::max_abs, Pooling::l2})
        CHECK(pool_channels(e, p).v[0] == doctest::Approx(0.7).epsilon(1e-14));

    // One pixel with channels (0.3, -0.5, 0.4).
    Heatmap m = make_map(1, 1, {0.3, -0.5, 0.4});
    CHECK(pool_channels(m, Pooling::mean).v[0] == doctest::Approx(0.2 / 3.0).epsilon(1e-12));
    CHECK(pool_channels(m, Pooling::max).v[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(pool_channels(m, Pooling::max_abs).v[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pool_channels(m, Pooling::l2).v[0] ==
          doctest::Approx(std::sqrt((0.09 + 0.25 + 0.16) / 3.0)).epsilon(1e-12));

    CHECK(pooling_signed(Pooling::mean));
    CHECK(pooling_signed(Pooling::max));
    CHECK_FALSE(pooling_signed(Pooling::max_abs));
    CHECK_FALSE(pooling_signed(Pooling::l2));

    Rng rng(7);
    const int h = 9, w = 7, plane = h * w;
    std::vector<double> vals(3 * plane);
    for (double& x : vals) x = rng.uniform(-2.0, 2.0);
    Heatmap big = make_map(h, w, vals);
    for (Pooling p : {Pooling::mean, Pooling::max, Pooling::max_abs, Pooling::l2}) {
        PooledMap pm = pool_channels(big, p);
        REQUIRE(static_cast<int>(pm.v.size()) == plane);
        for (int i = 0; i < plane; ++i) {
            const double a = vals[i], b = vals[plane + i], c = vals[2 * plane + i];
            double want = 0;
            switch (p) {
                case Pooling::mean: want = (a + b + c) / 3.0; break;
                case Pooling::max: want = std::max({a, b, c}); break;
                case Pooling::max_abs: want = std::max({std::fabs(a), std::fabs(b), std::fabs(c)}); break;
                case Pooling::l2: want = std::sqrt((a * a + b * b + c * c) / 3.0); break;
            }
            CHECK(pm.v[i] == doctest::Approx(want).epsilon(1e-13));
        }
    }

    CHECK(pooling_from_string("max-abs") == Pooling::max_abs);
    CHECK(to_string(Pooling::l2) == "l2");
    CHECK_THROWS_AS(pooling_from_string("median"), InvalidArgument);
}

TEST_CASE("percentile statistic is the pinned order statistic") {
    // 1..100: index ceil(99)-1 = 98, so the 99th smallest value.
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    Rng rng(3);
    rng.shuffle(v);
    CHECK(norm_statistic(v, NormStat::percentile99) == doctest::Approx(99.0));
    CHECK(norm_statistic(v, NormStat::max) == doctest::Approx(100.0));

    // A single huge outlier among 10000 values does not move percentile-99.
    std::vector<double> w(10000);
    for (size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(0.0, 1.0);
    std::vector<double> sorted = w;
    std::sort(sorted.begin(), sorted.end());
    const double want = sorted[static_cast<size_t>(std::ceil(0.99 * 10000)) - 1];
    w[137] = 10000.0;
    std::vector<double> sorted2 = w;
    std::sort(sorted2.begin(), sorted2.end());
    const double got = norm_statistic(w, NormStat::percentile99);
    CHECK(got == doctest::Approx(sorted2[9899]));
    CHECK(got < 1.0);
    CHECK(got >= want * 0.9);

    CHECK(norm_statistic({}, NormStat::max) == 0.0);
    CHECK(norm_statistic({5.0}, NormStat::percentile99) == doctest::Approx(5.0));
}

TEST_CASE("normalization scope and clipping") {
    auto a = pooled_from({0.5, -2.0, 1.0, 0.0}, 2, 2, Pooling::mean);
    auto b = pooled_from({0.25, 0.5, -0.5, 0.1}, 2, 2, Pooling::mean);

    SUBCASE("per-image divides each map by its own maximum") {
        std::vector<PooledMap> maps{a, b};
        normalize_maps(maps, NormStat::max, NormScope::per_image);
        CHECK(maps[0].v[1] == doctest::Approx(-1.0));
        CHECK(maps[0].v[0] == doctest::Approx(0.25));
        CHECK(maps[1].v[1] == doctest::Approx(1.0));
        CHECK(maps[1].v[0] == doctest::Approx(0.5));
    }
    SUBCASE("per-set divides every map by the pooled maximum") {
        std::vector<PooledMap> maps{a, b};
        normalize_maps(maps, NormStat::max, NormScope::per_set);
        CHECK(maps[0].v[1] == doctest::Approx(-1.0));
        CHECK(maps[1].v[1] == doctest::Approx(0.25));
        CHECK(maps[1].v[2] == doctest::Approx(-0.25));
    }
    SUBCASE("percentile normalization clips the outlier to 1") {
        std::vector<double> v(400);
        Rng rng(11);
        for (double& x : v) x = rng.uniform(-1.0, 1.0);
        v[17] = 10000.0;
        std::vector<PooledMap> maps{pooled_from(v, 20, 20, Pooling::mean)};
        normalize_maps(maps, NormStat::percentile99, NormScope::per_image);
        CHECK(maps[0].v[17] == doctest::Approx(1.0));
        double mx = 0;
        for (double x : maps[0].v) mx = std::max(mx, std::fabs(x));
        CHECK(mx == doctest::Approx(1.0));
    }
    SUBCASE("all-zero maps stay zero") {
        std::vector<PooledMap> maps{pooled_from({0, 0, 0, 0}, 2, 2, Pooling::mean)};
        normalize_maps(maps, NormStat::max, NormScope::per_image);
        for (double x : maps[0].v) CHECK(x == 0.0);
    }
    SUBCASE("positive rescaling of the input leaves per-image max output unchanged") {
        std::vector<PooledMap> m1{a}, m2{a};
        for (double& x : m2[0].v) x *= 3.75;
        normalize_maps(m1, NormStat::max, NormScope::per_image);
        normalize_maps(m2, NormStat::max, NormScope::per_image);
        for (size_t i = 0; i < m1[0].v.size(); ++i)
            CHECK(m1[0].v[i] == doctest::Approx(m2[0].v[i]).epsilon(1e-14));
    }
    SUBCASE("background pixels do not contribute the statistic") {
        // fg excludes the big value at index 3.
        auto m = pooled_from({0.5, 0.25, 0.0, 8.0}, 2, 2, Pooling::mean, {1, 1, 1, 0});
        std::vector<PooledMap> maps{m};
        normalize_maps(maps, NormStat::max, NormScope::per_image);
        CHECK(maps[0].v[0] == doctest::Approx(1.0));
        CHECK(maps[0].v[3] == doctest::Approx(1.0));  // clipped
    }
}

TEST_CASE("normal quantile agrees with the exact CDF") {
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-9));
    CHECK(normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-9));
    for (double p : {1e-6, 1e-3, 0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.98, 0.999, 1.0 - 1e-6}) {
        const double x = normal_quantile(p);
        const double back = 0.5 * std::erfc(-x / std::sqrt(2.0));
        CHECK(back == doctest::Approx(p).epsilon(1e-10));
    }
    CHECK_THROWS_AS(normal_quantile(0.0), InvalidArgument);
    CHECK_THROWS_AS(normal_quantile(1.0), InvalidArgument);
}

TEST_CASE("aggregation is a normal-score transform") {
    const int h = 25, w = 40;  // 1000 foreground pixels
    const size_t n = static_cast<size_t>(h) * w;
    Rng rng(23);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-5.0, 5.0);

    SUBCASE("identical pair: zero mean, unit variance, order preserved") {
        auto agg = aggregate_maps(
            {pooled_from(v, h, w, Pooling::mean), pooled_from(v, h, w, Pooling::mean)}, 99);
        double mean = 0;
        for (double x : agg.v) mean += x;
        mean /= static_cast<double>(n);
        CHECK(std::fabs(mean) < 1e-6);
        double var = 0;
        for (double x : agg.v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(n - 1);
        CHECK(var == doctest::Approx(1.0).epsilon(0.02));
        CHECK(ranks_of(v) == ranks_of(agg.v));
    }
    SUBCASE("identical maps aggregate to the same transform") {
        auto two = aggregate_maps(
            {pooled_from(v, h, w, Pooling::mean), pooled_from(v, h, w, Pooling::mean)}, 99);
        auto three = aggregate_maps({pooled_from(v, h, w, Pooling::mean),
                                     pooled_from(v, h, w, Pooling::mean),
                                     pooled_from(v, h, w, Pooling::mean)},
                                    99);
        for (size_t i = 0; i < n; ++i) CHECK(three.v[i] == doctest::Approx(two.v[i]).epsilon(1e-9));
        CHECK(ranks_of(three.v) == ranks_of(v));
    }
    SUBCASE("a rank-reversed pair cancels") {
        std::vector<double> neg(n);
        for (size_t i = 0; i < n; ++i) neg[i] = -v[i];
        auto agg = aggregate_maps(
            {pooled_from(v, h, w, Pooling::mean), pooled_from(neg, h, w, Pooling::mean)}, 5);
        for (double x : agg.v) CHECK(std::fabs(x) < 1e-6);
    }
    SUBCASE("monotone transforms leave the aggregate unchanged") {
        std::vector<double> other(n), cubed(n);
        Rng r2(77);
        for (double& x : other) x = r2.uniform(-1.0, 1.0);
        for (size_t i = 0; i < n; ++i) cubed[i] = v[i] * v[i] * v[i] + v[i];
        auto a = aggregate_maps(
            {pooled_from(v, h, w, Pooling::mean), pooled_from(other, h, w, Pooling::mean)}, 42);
        auto b = aggregate_maps(
            {pooled_from(cubed, h, w, Pooling::mean), pooled_from(other, h, w, Pooling::mean)}, 42);
        for (size_t i = 0; i < n; ++i) CHECK(a.v[i] == doctest::Approx(b.v[i]).epsilon(1e-12));
    }
    SUBCASE("constant maps are deterministic") {
        std::vector<double> flat(n, 0.25);
        auto a = aggregate_maps(
            {pooled_from(flat, h, w, Pooling::mean), pooled_from(flat, h, w, Pooling::mean)}, 7);
        auto b = aggregate_maps(
            {pooled_from(flat, h, w, Pooling::mean), pooled_from(flat, h, w, Pooling::mean)}, 7);
        CHECK(a.v == b.v);
    }
    SUBCASE("background pixels stay zero and are excluded") {
        std::vector<uint8_t> fg(n, 1);
        for (size_t i = 0; i < n; i += 3) fg[i] = 0;
        auto agg = aggregate_maps({pooled_from(v, h, w, Pooling::mean, fg),
                                   pooled_from(v, h, w, Pooling::mean, fg)},
                                  99);
        double mean = 0;
        size_t cnt = 0;
        for (size_t i = 0; i < n; ++i) {
            if (!fg[i]) {
                CHECK(agg.v[i] == 0.0);
            } else {
                mean += agg.v[i];
                ++cnt;
            }
        }
        CHECK(std::fabs(mean / static_cast<double>(cnt)) < 1e-6);
    }
    SUBCASE("mixing sign classes is rejected") {
        CHECK_THROWS_AS(aggregate_maps({pooled_from(v, h, w, Pooling::mean),
                                        pooled_from(v, h, w, Pooling::l2)},
                                       1),
                        InvalidArgument);
        CHECK_THROWS_AS(aggregate_maps({}, 1), InvalidArgument);
        CHECK_THROWS_AS(aggregate_maps({pooled_from(v, h, w, Pooling::mean)}, 1), InvalidArgument);
        CHECK_THROWS_AS(aggregate_maps({pooled_from(v, h, w, Pooling::mean),
                                        pooled_from({1.0, 2.0}, 1, 2, Pooling::mean)},
                                       1),
                        InvalidArgument);
    }
}

TEST_CASE("rendering maps -1/0/+1 to red/white/green with black background") {
    auto m = pooled_from({-1.0, 0.0, 1.0, 0.5, -0.5, 2.0}, 2, 3, Pooling::mean,
                         {1, 1, 1, 1, 1, 0});
    auto rgb = render_rgb(m);
    REQUIRE(rgb.size() == 18);
    CHECK(rgb[0] == 255);  // -1: red
    CHECK(rgb[1] == 0);
    CHECK(rgb[2] == 0);
    CHECK(rgb[3] == 255);  // 0: white
    CHECK(rgb[4] == 255);
    CHECK(rgb[5] == 255);
    CHECK(rgb[6] == 0);  // +1: green
    CHECK(rgb[7] == 255);
    CHECK(rgb[8] == 0);
    CHECK(rgb[9] == 128);  // +0.5 rounds half up
    CHECK(rgb[10] == 255);
    CHECK(rgb[11] == 128);
    CHECK(rgb[12] == 255);  // -0.5
    CHECK(rgb[13] == 128);
    CHECK(rgb[14] == 128);
    CHECK(rgb[15] == 0);  // background pixel is black
    CHECK(rgb[16] == 0);
    CHECK(rgb[17] == 0);

    // An all-zero map renders a white foreground.
    auto z = pooled_from({0.0, 0.0, 0.0, 0.0}, 2, 2, Pooling::mean);
    auto zr = render_rgb(z);
    for (uint8_t b : zr) CHECK(b == 255);
}
