#ifndef FLOWLAB_EVALRANK_HPP
#define FLOWLAB_EVALRANK_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "flowlab/common.hpp"
#include "flowlab/variants.hpp"

namespace flowlab {

// Two-objective evaluation records and the ranking protocol: repeatedly peel
// Pareto fronts, assign the peel index as rank, average ranks per variant
// over control settings.

struct ControlSetting {
    std::string dataset;
    bool ema = false;
    std::string sampler_id;
    int sampler_steps = 0;

    std::string key() const { return dataset + "|" + (ema ? "ema" : "raw") + "|" + sampler_id; }
};

struct MetricRecord {
    std::string variant;
    ControlSetting control;
    double objective_a = 0.0;  // higher better (conditional fidelity here)
    double objective_b = 0.0;  // lower better (2-Wasserstein here)
};

// q weakly dominates r with strict improvement in at least one objective.
inline bool dominates(const MetricRecord& q, const MetricRecord& r) {
    return q.objective_a >= r.objective_a && q.objective_b <= r.objective_b &&
           (q.objective_a > r.objective_a || q.objective_b < r.objective_b);
}

inline std::vector<size_t> pareto_front_indices(const std::vector<MetricRecord>& records) {
    std::vector<size_t> front;
    for (size_t i = 0; i < records.size(); ++i) {
        bool dominated = false;
        for (size_t j = 0; j < records.size() && !dominated; ++j)
            if (j != i && dominates(records[j], records[i])) dominated = true;
        if (!dominated) front.push_back(i);
    }
    return front;
}

inline std::vector<MetricRecord> pareto_front(const std::vector<MetricRecord>& records) {
    std::vector<MetricRecord> out;
    for (size_t i : pareto_front_indices(records)) out.push_back(records[i]);
    return out;
}

// 1-based rank per record: peel the current front, assign the iteration
// index, remove, continue until everything is ranked.
inline std::vector<int> non_dominated_sort(const std::vector<MetricRecord>& records) {
    std::vector<int> rank(records.size(), 0);
    std::vector<size_t> remaining(records.size());
    for (size_t i = 0; i < records.size(); ++i) remaining[i] = i;
    int current = 1;
    while (!remaining.empty()) {
        std::vector<MetricRecord> sub;
        sub.reserve(remaining.size());
        for (size_t i : remaining) sub.push_back(records[i]);
        std::vector<size_t> front = pareto_front_indices(sub);
        std::vector<bool> in_front(remaining.size(), false);
        for (size_t f : front) in_front[f] = true;
        std::vector<size_t> next;
        for (size_t k = 0; k < remaining.size(); ++k) {
            if (in_front[k])
                rank[remaining[k]] = current;
            else
                next.push_back(remaining[k]);
        }
        remaining.swap(next);
        ++current;
    }
    return rank;
}

struct RankRow {
    std::string variant;
    double avg_all = 0.0;
    double avg_5step = 0.0;   // NaN when no 5-step cells
    double avg_50step = 0.0;  // NaN when no 50-step cells
    double completeness = 1.0;
};

// Ranks are computed per control cell across variants, then averaged per
// variant. Missing cells are skipped with a completeness fraction reported.
inline std::vector<RankRow> average_rank(const std::vector<MetricRecord>& records) {
    require(!records.empty(), "average_rank: no records");
    std::map<std::string, std::vector<size_t>> by_control;
    for (size_t i = 0; i < records.size(); ++i) by_control[records[i].control.key()].push_back(i);

    std::map<std::string, std::vector<std::pair<int, int>>> ranks;  // variant -> (rank, steps)
    for (auto& [ckey, idxs] : by_control) {
        std::vector<MetricRecord> cell;
        for (size_t i : idxs) cell.push_back(records[i]);
        std::vector<int> r = non_dominated_sort(cell);
        for (size_t k = 0; k < idxs.size(); ++k)
            ranks[cell[k].variant].emplace_back(r[k], cell[k].control.sampler_steps);
    }

    size_t n_controls = by_control.size();
    std::vector<RankRow> out;
    for (auto& [variant, rs] : ranks) {
        RankRow row;
        row.variant = variant;
        double sum = 0.0, sum5 = 0.0, sum50 = 0.0;
        int n5 = 0, n50 = 0;
        for (auto& [rank, steps] : rs) {
            sum += rank;
            if (steps == 5) {
                sum5 += rank;
                ++n5;
            }
            if (steps == 50) {
                sum50 += rank;
                ++n50;
            }
        }
        row.avg_all = sum / static_cast<double>(rs.size());
        row.avg_5step = n5 ? sum5 / n5 : std::numeric_limits<double>::quiet_NaN();
        row.avg_50step = n50 ? sum50 / n50 : std::numeric_limits<double>::quiet_NaN();
        row.completeness = static_cast<double>(rs.size()) / static_cast<double>(n_controls);
        out.push_back(row);
    }
    std::sort(out.begin(), out.end(), [](const RankRow& a, const RankRow& b) {
        return a.avg_all != b.avg_all ? a.avg_all < b.avg_all : a.variant < b.variant;
    });
    return out;
}

// ---- exact 2-Wasserstein by optimal assignment -------------------------------

namespace detail {

// Jonker-Volgenant style shortest-augmenting-path assignment; cost is any
// square matrix, returns the column matched to each row. O(n^3).
inline std::vector<int> min_cost_assignment(const std::vector<std::vector<double>>& cost) {
    int n = static_cast<int>(cost.size());
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
    std::vector<int> p(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n + 1), INF);
        std::vector<char> used(static_cast<size_t>(n + 1), 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            int i0 = p[static_cast<size_t>(j0)], j1 = -1;
            double delta = INF;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = cost[static_cast<size_t>(i0 - 1)][static_cast<size_t>(j - 1)] -
                             u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> match(static_cast<size_t>(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<size_t>(j)] > 0) match[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    return match;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace detail

constexpr size_t kMaxAssignmentSize = 512;

// Exact empirical 2-Wasserstein distance between equally weighted point sets.
inline double wasserstein2(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
    require(!a.empty() && a.size() == b.size(), "wasserstein2: point sets must be non-empty and equal-sized");
    if (a.size() > kMaxAssignmentSize)
        throw ContractViolation("wasserstein2: n=" + std::to_string(a.size()) + " exceeds exact-assignment limit " +
                                std::to_string(kMaxAssignmentSize) + "; subsample first");
    size_t n = a.size();
    std::vector<std::vector<double>> cost(n, std::vector<double>(n));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) cost[i][j] = detail::sq_dist(a[i], b[j]);
    std::vector<int> match = detail::min_cost_assignment(cost);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) total += cost[i][static_cast<size_t>(match[i])];
    return std::sqrt(total / static_cast<double>(n));
}

struct ToyMetrics {
    double fidelity = 0.0;  // objective_a, higher better
    double w2 = 0.0;        // objective_b, lower better
};

// Desk-scale stand-ins for CLIP score and FID: nearest-reference class
// agreement and exact W2 between samples and an equal-sized reference subset.
inline ToyMetrics toy_metrics(const std::vector<std::vector<double>>& samples, const std::vector<int>& sample_classes,
                              const std::vector<std::vector<double>>& reference, const std::vector<int>& ref_classes) {
    require(samples.size() >= 64, "toy_metrics: need at least 64 samples");
    require(samples.size() == sample_classes.size() && reference.size() == ref_classes.size(),
            "toy_metrics: class labels misaligned");
    require(!reference.empty(), "toy_metrics: empty reference set");

    int agree = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        size_t arg = 0;
        for (size_t j = 0; j < reference.size(); ++j) {
            double d = detail::sq_dist(samples[i], reference[j]);
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        if (ref_classes[arg] == sample_classes[i]) ++agree;
    }

    size_t n = std::min(samples.size(), std::min(reference.size(), kMaxAssignmentSize));
    std::vector<std::vector<double>> sa(samples.begin(), samples.begin() + static_cast<long>(n));
    std::vector<std::vector<double>> rb(reference.begin(), reference.begin() + static_cast<long>(n));

    ToyMetrics m;
    m.fidelity = static_cast<double>(agree) / static_cast<double>(samples.size());
    m.w2 = wasserstein2(sa, rb);
    return m;
}

}  // namespace flowlab

#endif
