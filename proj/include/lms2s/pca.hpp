#pragma once

// 2-D projection of latent points for cluster scatter reports: mean-center,
// then power iteration with deflation on the covariance matrix. Component
// signs are fixed so the largest-magnitude coordinate is positive, which
// keeps plots stable across runs.

#include <cmath>
#include <cstddef>
#include <vector>

#include "lms2s/common.hpp"
#include "lms2s/rng.hpp"
#include "lms2s/tensor.hpp"

namespace lms2s {

struct Pca2dResult {
    Tensor<double> projection;  // [M x 2]
    bool degenerate = false;    // set when the data has no variance
};

namespace detail {

inline constexpr std::uint64_t kPcaSeed = 0x5CA7E12DULL;  // fixed start vectors

inline double dominant_eigenvector(const std::vector<double>& cov, std::size_t d,
                                   std::vector<double>& vec, Rng& rng, double tol,
                                   int max_iters) {
    vec.resize(d);
    double norm = 0.0;
    for (auto& v : vec) {
        v = rng.uniform(-1.0, 1.0);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : vec) v /= norm;

    std::vector<double> next(d);
    double lambda = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += cov[i * d + j] * vec[j];
            next[i] = acc;
        }
        double next_norm = 0.0;
        for (double v : next) next_norm += v * v;
        next_norm = std::sqrt(next_norm);
        if (next_norm == 0.0) return 0.0;  // vanished: no remaining variance
        for (auto& v : next) v /= next_norm;
        double diff_same = 0.0, diff_flip = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            diff_same += (next[i] - vec[i]) * (next[i] - vec[i]);
            diff_flip += (next[i] + vec[i]) * (next[i] + vec[i]);
        }
        vec = next;
        lambda = next_norm;
        if (std::sqrt(std::min(diff_same, diff_flip)) < tol) break;
    }
    return lambda;
}

}  // namespace detail

inline Pca2dResult pca_project_2d(const Tensor<double>& points, double tol = 1e-9,
                                  int max_iters = 1000) {
    if (points.rank() != 2 || points.dim(0) < 2)
        throw ContractError("pca_project_2d: need at least 2 points, got " +
                            shape_str(points.shape()));
    const std::size_t m = points.dim(0), d = points.dim(1);

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += points.at(i, j);
    for (auto& v : mean) v /= static_cast<double>(m);

    std::vector<double> centered(m * d);
    double total_var = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            centered[i * d + j] = points.at(i, j) - mean[j];
            total_var += centered[i * d + j] * centered[i * d + j];
        }

    Pca2dResult result;
    result.projection = Tensor<double>::zeros({m, 2});
    if (total_var == 0.0) {
        result.degenerate = true;  // all points identical
        return result;
    }

    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double ca = centered[i * d + a];
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] += ca * centered[i * d + b];
        }
    const double inv = 1.0 / static_cast<double>(m - 1);
    for (auto& v : cov) v *= inv;

    Rng rng(detail::kPcaSeed);
    for (int comp = 0; comp < 2; ++comp) {
        std::vector<double> vec;
        const double lambda = detail::dominant_eigenvector(cov, d, vec, rng, tol, max_iters);
        if (lambda <= tol * std::max(1.0, total_var)) break;  // rank-deficient: leave zeros
        // Sign rule: largest-|coordinate| entry made positive; ties to lowest index.
        std::size_t arg = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (std::fabs(vec[j]) > std::fabs(vec[arg])) arg = j;
        if (vec[arg] < 0.0)
            for (auto& v : vec) v = -v;
        for (std::size_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += centered[i * d + j] * vec[j];
            result.projection.at(i, static_cast<std::size_t>(comp)) = acc;
        }
        // Deflate.
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * vec[a] * vec[b];
    }
    return result;
}

}  // namespace lms2s
