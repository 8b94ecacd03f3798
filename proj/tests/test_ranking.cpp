#include "heatrank/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "heatrank/rng.hpp"

using namespace heatrank;

namespace {

MetricScore row(const std::string& metric, const std::string& pooling, const std::string& method,
                double mean, double sem = 0.0, int n = 5) {
    MetricScore s;
    s.metric = metric;
    s.pooling = pooling;
    s.method = method;
    s.mean = mean;
    s.sem = sem;
    s.n = n;
    s.direction = metric_direction(metric);
    return s;
}

std::vector<std::string> order_names(const RankingResult& r) {
    std::vector<std::string> out;
    for (const RankedMethod& m : r.order) out.push_back(m.method);
    return out;
}

// Three methods, four columns spanning all three groups, tie-free at
// every stage. Hand-derived expectations live in the assertions.
std::vector<MetricScore> three_by_four() {
    std::vector<MetricScore> rows;
    rows.push_back(row("robustness/brightness", "mean", "alpha", 0.9));
    rows.push_back(row("robustness/brightness", "mean", "beta", 0.5));
    rows.push_back(row("robustness/brightness", "mean", "gamma", 0.1));
    rows.push_back(row("pixel-flipping", "mean", "alpha", 0.2));
    rows.push_back(row("pixel-flipping", "mean", "beta", 0.6));
    rows.push_back(row("pixel-flipping", "mean", "gamma", 0.4));
    rows.push_back(row("complexity", "mean", "alpha", 3.0));
    rows.push_back(row("complexity", "mean", "beta", 1.0));
    rows.push_back(row("complexity", "mean", "gamma", 2.0));
    rows.push_back(row("roc-auc", "mean", "alpha", 0.70));
    rows.push_back(row("roc-auc", "mean", "beta", 0.65));
    rows.push_back(row("roc-auc", "mean", "gamma", 0.60));
    return rows;
}

}  // namespace

TEST_CASE("metric ids map to groups and directions") {
    CHECK(metric_group("robustness/brightness") == MetricGroup::aug_robustness);
    CHECK(metric_group("robustness/rotate") == MetricGroup::aug_robustness);
    CHECK(metric_group("pixel-flipping") == MetricGroup::quality_no_gt);
    CHECK(metric_group("irof") == MetricGroup::quality_no_gt);
    CHECK(metric_group("sensitivity") == MetricGroup::quality_no_gt);
    CHECK(metric_group("complexity") == MetricGroup::quality_no_gt);
    CHECK(metric_group("roc-auc") == MetricGroup::ground_truth);
    CHECK(metric_group("relevance-mass-accuracy") == MetricGroup::ground_truth);
    CHECK_THROWS_AS(metric_group("accuracy"), InvalidArgument);

    CHECK(metric_direction("sensitivity") == Direction::lower_better);
    CHECK(metric_direction("complexity") == Direction::lower_better);
    CHECK(metric_direction("pixel-flipping") == Direction::higher_better);
    CHECK(metric_direction("irof") == Direction::higher_better);
    CHECK(metric_direction("roc-auc") == Direction::higher_better);
    CHECK(metric_direction("relevance-mass-accuracy") == Direction::higher_better);
    CHECK(metric_direction("robustness/hue") == Direction::higher_better);
    CHECK_THROWS_AS(metric_direction("loss"), InvalidArgument);

    CHECK(to_string(MetricGroup::aug_robustness) == "aug-robustness");
    CHECK(to_string(MetricGroup::quality_no_gt) == "quality-no-gt");
    CHECK(to_string(MetricGroup::ground_truth) == "ground-truth");
}

TEST_CASE("mrr of ranking lists") {
    SUBCASE("always first gives 1") {
        const auto m = mrr({{"a", "b", "c"}, {"a", "c", "b"}});
        CHECK(m.at("a") == 1.0);
    }
    SUBCASE("ranks one and two average to 0.75") {
        const auto m = mrr({{"a", "b"}, {"b", "a"}});
        CHECK(m.at("a") == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(m.at("b") == doctest::Approx(0.75).epsilon(1e-15));
    }
    SUBCASE("three methods, two rankings") {
        const auto m = mrr({{"a", "b", "c"}, {"b", "a", "c"}});
        CHECK(m.at("a") == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(m.at("b") == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(m.at("c") == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    SUBCASE("mrr lies between one over m and one") {
        Rng rng(7);
        std::vector<std::string> names = {"a", "b", "c", "d", "e"};
        std::vector<std::vector<std::string>> rankings;
        for (int i = 0; i < 9; ++i) {
            auto r = names;
            rng.shuffle(r);
            rankings.push_back(r);
        }
        for (const auto& [name, value] : mrr(rankings)) {
            CHECK(value >= 1.0 / 5.0);
            CHECK(value <= 1.0);
        }
    }
    SUBCASE("inconsistent method sets are rejected") {
        CHECK_THROWS_AS(mrr({{"a", "b"}, {"a", "c"}}), InvalidArgument);
        CHECK_THROWS_AS(mrr({{"a", "b"}, {"a"}}), InvalidArgument);
        CHECK_THROWS_AS(mrr({{"a", "a"}}), InvalidArgument);
        CHECK_THROWS_AS(mrr({}), InvalidArgument);
    }
}

TEST_CASE("make_table validates rows") {
    std::vector<MetricScore> rows = {row("roc-auc", "mean", "a", 0.7),
                                     row("roc-auc", "mean", "b", 0.6)};
    CHECK(make_table(rows).cells.size() == 2);

    SUBCASE("duplicate row") {
        rows.push_back(row("roc-auc", "mean", "a", 0.8));
        CHECK_THROWS_AS(make_table(rows), InvalidArgument);
    }
    SUBCASE("n below one") {
        rows.push_back(row("roc-auc", "mean", "c", 0.8, 0.0, 0));
        CHECK_THROWS_AS(make_table(rows), InvalidArgument);
    }
    SUBCASE("negative sem") {
        rows.push_back(row("roc-auc", "mean", "c", 0.8, -0.1));
        CHECK_THROWS_AS(make_table(rows), InvalidArgument);
    }
    SUBCASE("unknown metric without an explicit group") {
        rows.push_back(row("roc-auc", "mean", "c", 0.8));
        rows.back().metric = "custom-score";
        CHECK_THROWS_AS(make_table(rows), InvalidArgument);
        std::map<std::string, MetricGroup> groups = {
            {"custom-score", MetricGroup::ground_truth}};
        const MetricTable t = make_table(rows, &groups);
        CHECK(t.cells.back().group == MetricGroup::ground_truth);
    }
}

TEST_CASE("impute_table fills holes with column medians") {
    SUBCASE("odd count of present values") {
        std::vector<MetricScore> rows = {row("roc-auc", "mean", "a", 0.2, 0.01),
                                         row("roc-auc", "mean", "b", 0.6, 0.05),
                                         row("roc-auc", "mean", "c", 0.4, 0.03),
                                         row("irof", "mean", "a", 0.5, 0.02),
                                         row("irof", "mean", "b", 0.5, 0.02),
                                         row("irof", "mean", "c", 0.5, 0.02),
                                         row("irof", "mean", "d", 0.5, 0.02)};
        MetricTable t = make_table(rows);
        impute_table(t);
        CHECK(t.cells.size() == 8);
        const TableCell& filled = t.cells.back();
        CHECK(filled.score.metric == "roc-auc");
        CHECK(filled.score.method == "d");
        CHECK(filled.imputed);
        CHECK(filled.score.mean == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(filled.score.sem == doctest::Approx(0.03).epsilon(1e-15));
        CHECK(filled.score.n == 0);
    }
    SUBCASE("even count averages the middle two") {
        std::vector<MetricScore> rows = {row("roc-auc", "mean", "a", 0.1),
                                         row("roc-auc", "mean", "b", 0.9),
                                         row("roc-auc", "mean", "c", 0.3),
                                         row("roc-auc", "mean", "d", 0.5),
                                         row("irof", "mean", "e", 0.5)};
        // Method e exists only in the irof column, so roc-auc gets one
        // imputed cell (and irof four).
        MetricTable t = make_table(rows);
        impute_table(t);
        double imputed_roc = -1.0;
        for (const TableCell& c : t.cells)
            if (c.imputed && c.score.metric == "roc-auc") imputed_roc = c.score.mean;
        CHECK(imputed_roc == doctest::Approx(0.4).epsilon(1e-15));
    }
    SUBCASE("complete table is untouched") {
        MetricTable t = make_table(three_by_four());
        const size_t before = t.cells.size();
        impute_table(t);
        CHECK(t.cells.size() == before);
        for (const TableCell& c : t.cells) CHECK_FALSE(c.imputed);
    }
}

TEST_CASE("rank_once matches a hand-computed oracle") {
    const MetricTable t = make_table(three_by_four());
    const RankingResult r = rank_once(t, 11);

    // Column ranks: robustness alpha<1> beta<2> gamma<3>; pixel-flipping
    // beta<1> gamma<2> alpha<3>; complexity (lower better) beta<1>
    // gamma<2> alpha<3>; roc-auc alpha<1> beta<2> gamma<3>.
    // Group mrrs: robustness a=1 b=.5 c=1/3; quality a=1/3 b=1 c=.5;
    // ground-truth a=1 b=.5 c=1/3. Group ranks: a=(1,3,1) b=(2,1,2)
    // c=(3,2,3).
    REQUIRE(r.order.size() == 3);
    CHECK(r.mode == "means-only");
    CHECK(r.order[0].method == "alpha");
    CHECK(r.order[1].method == "beta");
    CHECK(r.order[2].method == "gamma");
    CHECK(r.order[0].mrr == (1.0 / 1.0 + 1.0 / 3.0 + 1.0 / 1.0) / 3.0);
    CHECK(r.order[1].mrr == (1.0 / 2.0 + 1.0 / 1.0 + 1.0 / 2.0) / 3.0);
    CHECK(r.order[2].mrr == (1.0 / 3.0 + 1.0 / 2.0 + 1.0 / 3.0) / 3.0);
    for (const RankedMethod& m : r.order) CHECK(m.uncertainty == 0.0);

    // Tie noise is far below the score gaps, so the seed cannot matter.
    for (std::uint64_t seed : {0ull, 1ull, 99ull})
        CHECK(order_names(rank_once(t, seed)) == order_names(r));
}

TEST_CASE("rank_once puts a dominant method first with mrr one") {
    std::vector<MetricScore> rows = three_by_four();
    // delta beats every column: higher on the higher-better metrics,
    // lower on complexity.
    rows.push_back(row("robustness/brightness", "mean", "delta", 0.95));
    rows.push_back(row("pixel-flipping", "mean", "delta", 0.7));
    rows.push_back(row("complexity", "mean", "delta", 0.5));
    rows.push_back(row("roc-auc", "mean", "delta", 0.8));
    const RankingResult r = rank_once(make_table(rows), 3);
    CHECK(r.order[0].method == "delta");
    CHECK(r.order[0].mrr == 1.0);
}

TEST_CASE("rank_once works on tables missing a group") {
    // Only two groups present: the final mrr averages over those two.
    std::vector<MetricScore> rows = {
        row("pixel-flipping", "mean", "a", 0.9), row("pixel-flipping", "mean", "b", 0.1),
        row("roc-auc", "mean", "a", 0.2),        row("roc-auc", "mean", "b", 0.8)};
    const RankingResult r = rank_once(make_table(rows), 5);
    REQUIRE(r.order.size() == 2);
    // a: group ranks (1, 2); b: (2, 1). Both mrr 0.75; tie falls back to
    // name order.
    CHECK(r.order[0].method == "a");
    CHECK(r.order[0].mrr == 0.75);
    CHECK(r.order[1].method == "b");
    CHECK(r.order[1].mrr == 0.75);
}

TEST_CASE("rank_once rejects incomplete tables") {
    std::vector<MetricScore> rows = three_by_four();
    rows.pop_back();
    CHECK_THROWS_AS(rank_once(make_table(rows), 1), InvalidArgument);
}

TEST_CASE("monotone transforms of a column leave the ranking unchanged") {
    std::vector<MetricScore> rows = three_by_four();
    const RankingResult base = rank_once(make_table(rows), 21);
    for (MetricScore& s : rows)
        if (s.metric == "pixel-flipping") s.mean = std::pow(s.mean, 3) + s.mean;
    const RankingResult mapped = rank_once(make_table(rows), 21);
    REQUIRE(mapped.order.size() == base.order.size());
    for (size_t i = 0; i < base.order.size(); ++i) {
        CHECK(mapped.order[i].method == base.order[i].method);
        CHECK(mapped.order[i].mrr == base.order[i].mrr);
    }
}

TEST_CASE("duplicating an agreeing column keeps the result") {
    // Both quality columns rank the methods identically, so the group
    // mrr is 1/rank for every method no matter how many copies exist.
    std::vector<MetricScore> rows = three_by_four();
    const RankingResult base = rank_once(make_table(rows), 13);
    std::vector<MetricScore> extra;
    for (const MetricScore& s : rows)
        if (s.metric == "pixel-flipping") {
            MetricScore copy = s;
            copy.pooling = "max";
            extra.push_back(copy);
        }
    for (MetricScore& s : rows)
        if (s.metric == "complexity") {
            // Align complexity with pixel-flipping: beta best, gamma
            // middle, alpha worst (lower is better).
            if (s.method == "alpha") s.mean = 3.0;
            if (s.method == "beta") s.mean = 1.0;
            if (s.method == "gamma") s.mean = 2.0;
        }
    const RankingResult aligned = rank_once(make_table(rows), 13);
    rows.insert(rows.end(), extra.begin(), extra.end());
    const RankingResult dup = rank_once(make_table(rows), 13);
    REQUIRE(dup.order.size() == aligned.order.size());
    for (size_t i = 0; i < dup.order.size(); ++i) {
        CHECK(dup.order[i].method == aligned.order[i].method);
        CHECK(dup.order[i].mrr == aligned.order[i].mrr);
    }
    (void)base;
}

TEST_CASE("rank_monte_carlo basics") {
    const MetricTable t = make_table(three_by_four());

    SUBCASE("rejects fewer than two repetitions") {
        CHECK_THROWS_AS(rank_monte_carlo(t, 1, 1), InvalidArgument);
        CHECK_THROWS_AS(rank_monte_carlo(t, 0, 1), InvalidArgument);
    }
    SUBCASE("deterministic for a fixed seed") {
        const RankingResult a = rank_monte_carlo(t, 50, 17);
        const RankingResult b = rank_monte_carlo(t, 50, 17);
        REQUIRE(a.order.size() == b.order.size());
        CHECK(a.mode == "monte-carlo");
        for (size_t i = 0; i < a.order.size(); ++i) {
            CHECK(a.order[i].method == b.order[i].method);
            CHECK(a.order[i].mrr == b.order[i].mrr);
            CHECK(a.order[i].uncertainty == b.order[i].uncertainty);
        }
    }
    SUBCASE("zero sems reproduce the means-only order exactly") {
        const RankingResult mc = rank_monte_carlo(t, 25, 9);
        const RankingResult once = rank_once(t, 9);
        CHECK(order_names(mc) == order_names(once));
        for (size_t i = 0; i < mc.order.size(); ++i) {
            // Every repetition lands on the same ranking, so the mean
            // reciprocal final rank is exactly 1/(i+1) with zero spread.
            CHECK(mc.order[i].mrr == 1.0 / static_cast<double>(i + 1));
            CHECK(mc.order[i].uncertainty == 0.0);
        }
    }
    SUBCASE("tiny sems converge to the means-only order") {
        std::vector<MetricScore> rows = three_by_four();
        for (MetricScore& s : rows) s.sem = 1e-12;
        const RankingResult mc = rank_monte_carlo(make_table(rows), 40, 31);
        CHECK(order_names(mc) == order_names(rank_once(make_table(rows), 31)));
        for (size_t i = 0; i < mc.order.size(); ++i)
            CHECK(mc.order[i].mrr == 1.0 / static_cast<double>(i + 1));
    }
}

TEST_CASE("rank_monte_carlo recovers overlap probabilities") {
    // Two methods on one metric with overlapping uncertainty. For two
    // methods the rank-1 frequency f satisfies mrr = f + (1-f)/2.
    std::vector<MetricScore> rows = {row("roc-auc", "mean", "a", 0.50, 0.05, 10),
                                     row("roc-auc", "mean", "b", 0.52, 0.05, 10)};
    const int reps = 100;
    const RankingResult mc = rank_monte_carlo(make_table(rows), reps, 41);
    double mrr_a = 0.0;
    for (const RankedMethod& m : mc.order)
        if (m.method == "a") mrr_a = m.mrr;
    const double f = 2.0 * mrr_a - 1.0;

    // Direct simulation of P(N(.50,.05) > N(.52,.05)) with a large draw.
    Rng rng(20260817);
    int wins = 0;
    const int sims = 1000000;
    for (int i = 0; i < sims; ++i)
        if (0.50 + 0.05 * rng.normal() > 0.52 + 0.05 * rng.normal()) ++wins;
    const double f_ref = static_cast<double>(wins) / sims;

    CHECK(f > 0.0);
    CHECK(f < 1.0);
    const double sigma = std::sqrt(f_ref * (1.0 - f_ref) / reps);
    CHECK(std::fabs(f - f_ref) <= 3.0 * sigma);

    // Uncertainty must be positive when the order is unstable.
    for (const RankedMethod& m : mc.order) CHECK(m.uncertainty > 0.0);
}
