#ifndef FLOWLAB_DATAGUARD_HPP
#define FLOWLAB_DATAGUARD_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "flowlab/common.hpp"

namespace flowlab {

// Data-hygiene algorithms: cluster-scoped near-duplicate removal and
// memorization detection over generated samples with a tiled distance.

struct EmbeddingRecord {
    long id = 0;
    std::vector<double> vector;
    int cluster = -1;
};

namespace dg_detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace dg_detail

// Lloyd's k-means with k-means++ seeding. Empty clusters are repaired by
// stealing the point farthest from its assigned center.
inline std::vector<int> cluster_embeddings(const std::vector<std::vector<double>>& corpus, int n_clusters, Rng& rng,
                                           int max_iters = 50) {
    require(n_clusters >= 1, "cluster_embeddings: N must be >= 1");
    require(corpus.size() >= static_cast<size_t>(n_clusters),
            "cluster_embeddings: corpus smaller than cluster count");
    size_t n = corpus.size();
    size_t dim = corpus[0].size();
    for (auto& v : corpus) require(v.size() == dim, "cluster_embeddings: ragged corpus");

    // k-means++ seeding
    std::vector<std::vector<double>> centers;
    centers.push_back(corpus[rng.index(n)]);
    std::vector<double> d2(n, 0.0);
    while (centers.size() < static_cast<size_t>(n_clusters)) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (auto& c : centers) best = std::min(best, dg_detail::sq_dist(corpus[i], c));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centers.push_back(corpus[rng.index(n)]);
            continue;
        }
        double r = rng.uniform() * total;
        size_t pick = 0;
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc >= r) {
                pick = i;
                break;
            }
        }
        centers.push_back(corpus[pick]);
    }

    std::vector<int> assign(n, 0);
    for (int it = 0; it < max_iters; ++it) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int arg = 0;
            for (int k = 0; k < n_clusters; ++k) {
                double d = dg_detail::sq_dist(corpus[i], centers[static_cast<size_t>(k)]);
                if (d < best) {
                    best = d;
                    arg = k;
                }
            }
            if (assign[i] != arg) {
                assign[i] = arg;
                changed = true;
            }
        }
        // recompute centers
        std::vector<std::vector<double>> sums(static_cast<size_t>(n_clusters), std::vector<double>(dim, 0.0));
        std::vector<int> counts(static_cast<size_t>(n_clusters), 0);
        for (size_t i = 0; i < n; ++i) {
            for (size_t d = 0; d < dim; ++d) sums[static_cast<size_t>(assign[i])][d] += corpus[i][d];
            ++counts[static_cast<size_t>(assign[i])];
        }
        for (int k = 0; k < n_clusters; ++k) {
            if (counts[static_cast<size_t>(k)] == 0) {
                // repair: take the point farthest from its center
                double worst = -1.0;
                size_t steal = 0;
                for (size_t i = 0; i < n; ++i) {
                    double d = dg_detail::sq_dist(corpus[i], centers[static_cast<size_t>(assign[i])]);
                    if (d > worst) {
                        worst = d;
                        steal = i;
                    }
                }
                assign[steal] = k;
                centers[static_cast<size_t>(k)] = corpus[steal];
                changed = true;
                continue;
            }
            for (size_t d = 0; d < dim; ++d)
                centers[static_cast<size_t>(k)][d] = sums[static_cast<size_t>(k)][d] / counts[static_cast<size_t>(k)];
        }
        if (!changed) break;
    }
    return assign;
}

// Algorithm 1 transcription: iterate items in order, skip items already
// marked, range-search neighbors within thresh (Euclidean), mark every
// neighbor except the query itself. First-encountered representative survives.
inline std::set<long> find_cluster_duplicates(const std::vector<std::vector<double>>& vecs,
                                              const std::vector<long>& items, double thresh) {
    require(vecs.size() == items.size(), "find_cluster_duplicates: vecs/items misaligned (" +
                                             std::to_string(vecs.size()) + " vs " + std::to_string(items.size()) +
                                             ")");
    std::set<long> dups;
    double t2 = thresh * thresh;
    for (size_t i = 0; i < vecs.size(); ++i) {
        long qid = items[i];
        if (dups.count(qid)) continue;
        for (size_t j = 0; j < vecs.size(); ++j) {
            if (items[j] == qid) continue;
            if (dg_detail::sq_dist(vecs[i], vecs[j]) < t2) dups.insert(items[j]);
        }
    }
    return dups;
}

// Max over corresponding tiles of the per-tile Euclidean distance. Images are
// flat row-major side*side grids, values on a normalized [0,1] range.
inline double tiled_distance(const std::vector<double>& img_a, const std::vector<double>& img_b, int side,
                             int tiles_per_side) {
    require(img_a.size() == img_b.size(), "tiled_distance: image sizes differ");
    require(side * side == static_cast<int>(img_a.size()), "tiled_distance: not a square image");
    require(tiles_per_side >= 1 && side % tiles_per_side == 0,
            "tiled_distance: side " + std::to_string(side) + " not divisible by " + std::to_string(tiles_per_side));
    int tile = side / tiles_per_side;
    double worst = 0.0;
    for (int ti = 0; ti < tiles_per_side; ++ti)
        for (int tj = 0; tj < tiles_per_side; ++tj) {
            double acc = 0.0;
            for (int y = 0; y < tile; ++y)
                for (int x = 0; x < tile; ++x) {
                    size_t idx = static_cast<size_t>((ti * tile + y) * side + tj * tile + x);
                    double d = img_a[idx] - img_b[idx];
                    acc += d * d;
                }
            worst = std::max(worst, std::sqrt(acc));
        }
    return worst;
}

struct GenerationGraph {
    int nodes = 0;
    std::vector<std::vector<int>> adj;
    double epsilon = 0.15;
    int clique_threshold = 10;

    void add_edge(int a, int b) {
        require(a != b, "GenerationGraph: self-loop");
        adj[static_cast<size_t>(a)].push_back(b);
        adj[static_cast<size_t>(b)].push_back(a);
    }
};

inline GenerationGraph build_similarity_graph(const std::vector<std::vector<double>>& images, int side,
                                              int tiles_per_side, double epsilon, int clique_threshold) {
    GenerationGraph g;
    g.nodes = static_cast<int>(images.size());
    g.adj.resize(images.size());
    g.epsilon = epsilon;
    g.clique_threshold = clique_threshold;
    for (size_t i = 0; i < images.size(); ++i)
        for (size_t j = i + 1; j < images.size(); ++j)
            if (tiled_distance(images[i], images[j], side, tiles_per_side) < epsilon)
                g.add_edge(static_cast<int>(i), static_cast<int>(j));
    return g;
}

namespace dg_detail {

// Greedy maximal clique containing `seed`: extend by highest-degree
// candidates, deterministic tie-break by node id.
inline std::vector<int> greedy_clique_containing(const GenerationGraph& g, int seed) {
    std::vector<int> clique{seed};
    std::set<int> cand(g.adj[static_cast<size_t>(seed)].begin(), g.adj[static_cast<size_t>(seed)].end());
    while (!cand.empty()) {
        int best = -1;
        size_t best_deg = 0;
        for (int c : cand) {
            size_t deg = g.adj[static_cast<size_t>(c)].size();
            if (best == -1 || deg > best_deg || (deg == best_deg && c < best)) {
                best = c;
                best_deg = deg;
            }
        }
        clique.push_back(best);
        std::set<int> next;
        std::set<int> best_nb(g.adj[static_cast<size_t>(best)].begin(), g.adj[static_cast<size_t>(best)].end());
        for (int c : cand)
            if (c != best && best_nb.count(c)) next.insert(c);
        cand.swap(next);
    }
    return clique;
}

}  // namespace dg_detail

// Algorithm 2: mark all nodes of any greedily-found clique of size >= T.
inline std::set<int> detect_memorization_in_graph(const GenerationGraph& g) {
    require(g.clique_threshold >= 2, "detect_memorization: T must be >= 2");
    std::set<int> memorized;
    for (int node = 0; node < g.nodes; ++node) {
        std::vector<int> clique = dg_detail::greedy_clique_containing(g, node);
        if (static_cast<int>(clique.size()) >= g.clique_threshold)
            memorized.insert(clique.begin(), clique.end());
    }
    return memorized;
}

inline std::set<int> detect_memorization(const std::vector<std::vector<double>>& generations, int side,
                                         int tiles_per_side, double epsilon, int clique_threshold) {
    require(generations.size() >= 2, "detect_memorization: need >= 2 generations per prompt");
    require(epsilon > 0.0, "detect_memorization: epsilon must be positive");
    GenerationGraph g = build_similarity_graph(generations, side, tiles_per_side, epsilon, clique_threshold);
    return detect_memorization_in_graph(g);
}

struct DedupRow {
    double threshold = 0.0;
    size_t removed = 0;
    double removed_fraction = 0.0;
};

// Threshold sweep over cluster-scoped dedup; per-cluster Algorithm 1 runs are
// unioned into one removal set per threshold.
inline std::vector<DedupRow> dedup_report(const std::vector<EmbeddingRecord>& corpus,
                                          const std::vector<double>& thresholds) {
    std::map<int, std::vector<size_t>> by_cluster;
    for (size_t i = 0; i < corpus.size(); ++i) by_cluster[corpus[i].cluster].push_back(i);
    std::vector<DedupRow> rows;
    for (double th : thresholds) {
        std::set<long> removed;
        for (auto& [cl, idxs] : by_cluster) {
            std::vector<std::vector<double>> vecs;
            std::vector<long> ids;
            for (size_t i : idxs) {
                vecs.push_back(corpus[i].vector);
                ids.push_back(corpus[i].id);
            }
            std::set<long> dups = find_cluster_duplicates(vecs, ids, th);
            removed.insert(dups.begin(), dups.end());
        }
        DedupRow row;
        row.threshold = th;
        row.removed = removed.size();
        row.removed_fraction = corpus.empty() ? 0.0 : static_cast<double>(removed.size()) / corpus.size();
        rows.push_back(row);
    }
    return rows;
}

}  // namespace flowlab

#endif
