#include "heatrank/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "heatrank/rng.hpp"

namespace heatrank {

namespace {

struct ColumnKey {
    MetricGroup group;
    std::string metric;
    std::string pooling;
    Direction dir = Direction::higher_better;
};

// Canonical matrix view of a table: columns sorted by (group, metric,
// pooling), methods sorted by name.
struct Layout {
    std::vector<ColumnKey> columns;
    std::vector<std::string> methods;
    std::vector<std::vector<double>> mean;  // [column][method]
    std::vector<std::vector<double>> sem;
    std::vector<std::vector<char>> present;
};

Layout layout_of(const MetricTable& table, bool require_complete) {
    if (table.cells.empty()) throw InvalidArgument("empty metric table");
    std::set<std::pair<std::string, std::string>> column_keys;
    std::set<std::string> method_names;
    for (const TableCell& c : table.cells) {
        column_keys.insert({c.score.metric, c.score.pooling});
        method_names.insert(c.score.method);
    }
    Layout out;
    out.methods.assign(method_names.begin(), method_names.end());

    std::map<std::pair<std::string, std::string>, size_t> column_index;
    for (const auto& key : column_keys) {
        ColumnKey ck;
        ck.metric = key.first;
        ck.pooling = key.second;
        out.columns.push_back(ck);
    }
    // Resolve group/direction from the first cell of each column, then
    // verify the rest agree.
    std::map<std::string, size_t> method_index;
    for (size_t i = 0; i < out.methods.size(); ++i) method_index[out.methods[i]] = i;
    for (auto& col : out.columns) {
        bool found = false;
        for (const TableCell& c : table.cells) {
            if (c.score.metric != col.metric || c.score.pooling != col.pooling) continue;
            if (!found) {
                col.group = c.group;
                col.dir = c.score.direction;
                found = true;
            } else if (c.group != col.group || c.score.direction != col.dir) {
                throw InvalidArgument("conflicting group or direction for metric " + col.metric);
            }
        }
    }
    std::sort(out.columns.begin(), out.columns.end(), [](const ColumnKey& a, const ColumnKey& b) {
        if (a.group != b.group) return static_cast<int>(a.group) < static_cast<int>(b.group);
        if (a.metric != b.metric) return a.metric < b.metric;
        return a.pooling < b.pooling;
    });
    for (size_t i = 0; i < out.columns.size(); ++i)
        column_index[{out.columns[i].metric, out.columns[i].pooling}] = i;

    const size_t C = out.columns.size(), M = out.methods.size();
    out.mean.assign(C, std::vector<double>(M, 0.0));
    out.sem.assign(C, std::vector<double>(M, 0.0));
    out.present.assign(C, std::vector<char>(M, 0));
    for (const TableCell& c : table.cells) {
        const size_t ci = column_index.at({c.score.metric, c.score.pooling});
        const size_t mi = method_index.at(c.score.method);
        if (out.present[ci][mi])
            throw InvalidArgument("duplicate cell for " + c.score.metric + "/" + c.score.pooling +
                                  "/" + c.score.method);
        out.present[ci][mi] = 1;
        out.mean[ci][mi] = c.score.mean;
        out.sem[ci][mi] = c.score.sem;
    }
    if (require_complete) {
        for (size_t c = 0; c < C; ++c)
            for (size_t m = 0; m < M; ++m)
                if (!out.present[c][m])
                    throw InvalidArgument("table has missing cells; impute before ranking");
    }
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t k = v.size();
    return k % 2 == 1 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

// 1-based ranks per method for one column of noisy values.
std::vector<int> column_ranks(const std::vector<double>& value, Direction dir) {
    std::vector<size_t> order(value.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return dir == Direction::higher_better ? value[a] > value[b] : value[a] < value[b];
    });
    std::vector<int> rank(value.size());
    for (size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = static_cast<int>(pos) + 1;
    return rank;
}

// Methods ordered by descending score; equal scores keep index order,
// which is method-name order in a canonical layout.
std::vector<int> ranks_by_score_desc(const std::vector<double>& score) {
    std::vector<size_t> order(score.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return score[a] > score[b]; });
    std::vector<int> rank(score.size());
    for (size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = static_cast<int>(pos) + 1;
    return rank;
}

}  // namespace

std::string to_string(MetricGroup g) {
    switch (g) {
        case MetricGroup::aug_robustness: return "aug-robustness";
        case MetricGroup::quality_no_gt: return "quality-no-gt";
        case MetricGroup::ground_truth: return "ground-truth";
    }
    throw InvalidArgument("unknown metric group");
}

MetricGroup metric_group(const std::string& metric) {
    if (metric.rfind("robustness/", 0) == 0) return MetricGroup::aug_robustness;
    if (metric == "pixel-flipping" || metric == "irof" || metric == "sensitivity" ||
        metric == "complexity")
        return MetricGroup::quality_no_gt;
    if (metric == "roc-auc" || metric == "relevance-mass-accuracy")
        return MetricGroup::ground_truth;
    throw InvalidArgument("unknown metric: " + metric);
}

Direction metric_direction(const std::string& metric) {
    if (metric == "sensitivity" || metric == "complexity") return Direction::lower_better;
    metric_group(metric);  // validates the id
    return Direction::higher_better;
}

MetricTable make_table(const std::vector<MetricScore>& scores,
                       const std::map<std::string, MetricGroup>* groups) {
    MetricTable table;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const MetricScore& s : scores) {
        if (s.n < 1) throw InvalidArgument("metric rows need n >= 1");
        if (s.sem < 0.0) throw InvalidArgument("sem must be non-negative");
        if (!seen.insert({s.metric, s.pooling, s.method}).second)
            throw InvalidArgument("duplicate row for " + s.metric + "/" + s.pooling + "/" +
                                  s.method);
        TableCell cell;
        cell.score = s;
        if (groups != nullptr && groups->count(s.metric) > 0)
            cell.group = groups->at(s.metric);
        else
            cell.group = metric_group(s.metric);
        table.cells.push_back(std::move(cell));
    }
    return table;
}

void impute_table(MetricTable& table) {
    const Layout L = layout_of(table, false);
    for (size_t c = 0; c < L.columns.size(); ++c) {
        std::vector<double> means, sems;
        for (size_t m = 0; m < L.methods.size(); ++m) {
            if (!L.present[c][m]) continue;
            means.push_back(L.mean[c][m]);
            sems.push_back(L.sem[c][m]);
        }
        if (means.empty())
            throw InvalidArgument("metric column " + L.columns[c].metric +
                                  " has no measured values");
        if (means.size() == L.methods.size()) continue;
        const double med_mean = median(means);
        const double med_sem = median(sems);
        for (size_t m = 0; m < L.methods.size(); ++m) {
            if (L.present[c][m]) continue;
            TableCell cell;
            cell.score.metric = L.columns[c].metric;
            cell.score.pooling = L.columns[c].pooling;
            cell.score.method = L.methods[m];
            cell.score.mean = med_mean;
            cell.score.sem = med_sem;
            cell.score.n = 0;
            cell.score.direction = L.columns[c].dir;
            cell.group = L.columns[c].group;
            cell.imputed = true;
            table.cells.push_back(std::move(cell));
        }
    }
}

std::map<std::string, double> mrr(const std::vector<std::vector<std::string>>& rankings) {
    if (rankings.empty()) throw InvalidArgument("need at least one ranking");
    std::set<std::string> ref(rankings[0].begin(), rankings[0].end());
    if (ref.size() != rankings[0].size())
        throw InvalidArgument("ranking lists a method twice");
    std::map<std::string, double> acc;
    for (const auto& ranking : rankings) {
        std::set<std::string> cur(ranking.begin(), ranking.end());
        if (cur != ref || cur.size() != ranking.size())
            throw InvalidArgument("rankings disagree on the method set");
        for (size_t pos = 0; pos < ranking.size(); ++pos)
            acc[ranking[pos]] += 1.0 / static_cast<double>(pos + 1);
    }
    for (auto& [method, total] : acc) total /= static_cast<double>(rankings.size());
    return acc;
}

RankingResult rank_once(const MetricTable& table, std::uint64_t seed) {
    const Layout L = layout_of(table, true);
    const size_t C = L.columns.size(), M = L.methods.size();

    // Tie noise, drawn in canonical column-major order.
    Rng rng(seed_mix(seed, "rank-noise"));
    std::vector<std::vector<double>> noisy = L.mean;
    for (size_t c = 0; c < C; ++c) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (size_t m = 0; m < M; ++m) {
            lo = std::min(lo, L.mean[c][m]);
            hi = std::max(hi, L.mean[c][m]);
        }
        const double eta = 1e-9 * (hi - lo);
        for (size_t m = 0; m < M; ++m) noisy[c][m] += eta > 0.0 ? rng.uniform(-eta, eta) : 0.0;
    }

    // Group the columns in canonical group order.
    std::vector<MetricGroup> groups;
    for (const ColumnKey& col : L.columns)
        if (groups.empty() || groups.back() != col.group) groups.push_back(col.group);

    std::vector<std::vector<int>> group_rank;  // [group][method]
    for (MetricGroup g : groups) {
        std::vector<double> group_mrr(M, 0.0);
        int ncols = 0;
        for (size_t c = 0; c < C; ++c) {
            if (L.columns[c].group != g) continue;
            ++ncols;
            const std::vector<int> rank = column_ranks(noisy[c], L.columns[c].dir);
            for (size_t m = 0; m < M; ++m) group_mrr[m] += 1.0 / rank[m];
        }
        for (size_t m = 0; m < M; ++m) group_mrr[m] /= static_cast<double>(ncols);
        group_rank.push_back(ranks_by_score_desc(group_mrr));
    }

    std::vector<double> final_mrr(M, 0.0);
    for (const auto& rank : group_rank)
        for (size_t m = 0; m < M; ++m) final_mrr[m] += 1.0 / rank[m];
    for (size_t m = 0; m < M; ++m) final_mrr[m] /= static_cast<double>(group_rank.size());

    std::vector<size_t> order(M);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return final_mrr[a] > final_mrr[b]; });

    RankingResult out;
    out.mode = "means-only";
    for (size_t m : order) out.order.push_back({L.methods[m], final_mrr[m], 0.0});
    return out;
}

RankingResult rank_monte_carlo(const MetricTable& table, int n, std::uint64_t seed) {
    if (n < 2) throw InvalidArgument("Monte-Carlo ranking needs at least two repetitions");
    layout_of(table, true);  // validate completeness before sampling

    // Canonical cell order so the draw sequence is independent of cell order.
    std::vector<size_t> cell_order(table.cells.size());
    std::iota(cell_order.begin(), cell_order.end(), size_t{0});
    std::stable_sort(cell_order.begin(), cell_order.end(), [&](size_t a, size_t b) {
        const MetricScore& sa = table.cells[a].score;
        const MetricScore& sb = table.cells[b].score;
        return std::tie(sa.metric, sa.pooling, sa.method) <
               std::tie(sb.metric, sb.pooling, sb.method);
    });

    std::map<std::string, std::vector<double>> reciprocal;
    MetricTable sampled = table;
    for (int r = 0; r < n; ++r) {
        Rng rng(seed_mix(seed, "rank-samples", static_cast<std::uint64_t>(r)));
        for (size_t i : cell_order) {
            const MetricScore& orig = table.cells[i].score;
            sampled.cells[i].score.mean = orig.mean + orig.sem * rng.normal();
        }
        const RankingResult rr =
            rank_once(sampled, seed_mix(seed, "rank-reps", static_cast<std::uint64_t>(r)));
        for (size_t pos = 0; pos < rr.order.size(); ++pos)
            reciprocal[rr.order[pos].method].push_back(1.0 / static_cast<double>(pos + 1));
    }

    RankingResult out;
    out.mode = "monte-carlo";
    for (const auto& [method, recips] : reciprocal) {
        const auto [mean, sem] = mean_sem(recips);
        out.order.push_back({method, mean, sem});
    }
    std::stable_sort(out.order.begin(), out.order.end(),
                     [](const RankedMethod& a, const RankedMethod& b) { return a.mrr > b.mrr; });
    return out;
}

}  // namespace heatrank
