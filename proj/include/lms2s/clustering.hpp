#pragma once

// Hard cluster assignment and Silhouette-coefficient scoring over a batch of
// latent points. Distance metric is Euclidean. Conventions: s(i) = 0 for
// singleton clusters and when max(a, b) = 0; fewer than two non-empty
// clusters raises SingleClusterError (RL callers map it to the penalty
// reward).

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "lms2s/common.hpp"
#include "lms2s/tensor.hpp"

namespace lms2s {

// argmax over a probability vector; ties break to the lowest index.
template <typename S>
std::size_t assign_cluster(const Tensor<S>& probs) {
    if (probs.rank() != 1 || probs.dim(0) == 0)
        throw ContractError("assign_cluster: empty probability vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.dim(0); ++i)
        if (probs.data()[i] > probs.data()[best]) best = i;
    return best;
}

template <typename S>
struct LatentBatch {
    Tensor<S> points;                     // [M x D]
    std::vector<std::size_t> assignments; // length M, each < n_clusters
    std::size_t n_clusters = 0;
};

struct SilhouetteReport {
    std::vector<double> s;           // per-point s(i)
    double mean = 0.0;               // S_c
    std::vector<std::size_t> sizes;  // per-cluster point counts
};

// Full pairwise Euclidean distance matrix, stored dense M x M.
template <typename S>
std::vector<double> pairwise_distances(const Tensor<S>& points) {
    if (points.rank() != 2) throw ShapeError("pairwise_distances: points must be [M x D]");
    const std::size_t m = points.dim(0), d = points.dim(1);
    std::vector<double> dist(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = static_cast<double>(points.at(i, k)) -
                                    static_cast<double>(points.at(j, k));
                acc += diff * diff;
            }
            const double e = std::sqrt(acc);
            dist[i * m + j] = e;
            dist[j * m + i] = e;
        }
    return dist;
}

// Silhouette from a precomputed distance matrix. This is the path the RL
// environment uses every step, with the distances cached once per episode.
inline SilhouetteReport silhouette_from_distances(const std::vector<double>& dist, std::size_t m,
                                                  const std::vector<std::size_t>& assignments,
                                                  std::size_t n_clusters) {
    if (m < 2) throw ContractError("silhouette: need at least 2 points");
    if (assignments.size() != m)
        throw ContractError("silhouette: assignment count does not match point count");
    std::vector<std::size_t> sizes(n_clusters, 0);
    for (std::size_t a : assignments) {
        if (a >= n_clusters) throw ContractError("silhouette: assignment out of range");
        ++sizes[a];
    }
    std::size_t non_empty = 0;
    for (std::size_t s : sizes) non_empty += (s > 0);
    if (non_empty < 2)
        throw SingleClusterError("silhouette: fewer than 2 non-empty clusters");

    SilhouetteReport report;
    report.sizes = sizes;
    report.s.resize(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t ci = assignments[i];
        if (sizes[ci] == 1) {
            report.s[i] = 0.0;  // singleton convention
            continue;
        }
        std::vector<double> sum_to(n_clusters, 0.0);
        for (std::size_t j = 0; j < m; ++j)
            if (j != i) sum_to[assignments[j]] += dist[i * m + j];
        const double a = sum_to[ci] / static_cast<double>(sizes[ci] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n_clusters; ++c) {
            if (c == ci || sizes[c] == 0) continue;
            b = std::min(b, sum_to[c] / static_cast<double>(sizes[c]));
        }
        const double denom = std::max(a, b);
        report.s[i] = denom > 0.0 ? (b - a) / denom : 0.0;
    }
    double total = 0.0;
    for (double v : report.s) total += v;
    report.mean = total / static_cast<double>(m);
    return report;
}

template <typename S>
SilhouetteReport silhouette_score(const LatentBatch<S>& batch) {
    const std::size_t m = batch.points.rank() == 2 ? batch.points.dim(0) : 0;
    if (m < 2) throw ContractError("silhouette: need at least 2 points");
    return silhouette_from_distances(pairwise_distances(batch.points), m, batch.assignments,
                                     batch.n_clusters);
}

}  // namespace lms2s
