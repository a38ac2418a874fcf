#pragma once

// Latent-enhancing environment: actions multiplicatively rescale the four
// classifier parameter groups (layer weights and biases), the reward is
// k * S_c + b over a frozen latent sample, and an episode terminates when
// S_c reaches the target or the per-episode step cap. enhance_classifier
// drives a SAC agent against the environment under a total step budget and
// returns the parameters of the best silhouette seen.

#include <array>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "lms2s/clustering.hpp"
#include "lms2s/common.hpp"
#include "lms2s/sac.hpp"
#include "lms2s/seq2seq.hpp"

namespace lms2s {

inline constexpr std::size_t kClassifierGroups = 4;  // w1, b1, w2, b2

struct Action {
    std::array<double, kClassifierGroups> scales{1.0, 1.0, 1.0, 1.0};
};

inline constexpr double kActionLow = 0.5;
inline constexpr double kActionHigh = 1.5;

// Observation layout: [S_c, occupancy(n), mean+std per parameter group].
using Observation = std::vector<double>;

struct EnvConfig {
    double k = 100.0;
    double b = 25.0;
    double s_c_target = 0.55;
    std::size_t max_steps = 50;  // per-episode cap
};

struct EnvStepResult {
    Observation obs;
    double reward = 0.0;
    double s_c = -1.0;
    bool done = false;
};

template <typename S>
class ClusterEnv {
public:
    ClusterEnv(Tensor<S> latent_points, ClassifierParams<S> snapshot, EnvConfig cfg)
        : cfg_(cfg),
          points_(std::move(latent_points)),
          snapshot_(std::move(snapshot)),
          current_(clone(snapshot_)),
          n_(snapshot_.n_clusters()),
          m_(points_.dim(0)),
          distances_(pairwise_distances(points_)) {
        if (m_ < 2) throw ContractError("cluster env: need at least 2 latent points");
    }

    std::size_t n_clusters() const { return n_; }
    std::size_t obs_dim() const { return 1 + n_ + 2 * kClassifierGroups; }
    const ClassifierParams<S>& params() const { return current_; }
    std::size_t clip_warnings() const { return clip_warnings_; }
    const EnvConfig& config() const { return cfg_; }

    Observation reset() {
        current_ = clone(snapshot_);
        step_count_ = 0;
        return observe();
    }

    EnvStepResult step(const Action& action) {
        Action a = action;
        for (auto& s : a.scales) {
            if (s < kActionLow || s > kActionHigh) {
                s = std::min(std::max(s, kActionLow), kActionHigh);
                ++clip_warnings_;
            }
        }
        scale_group(current_.w1, a.scales[0]);
        scale_group(current_.b1, a.scales[1]);
        scale_group(current_.w2, a.scales[2]);
        scale_group(current_.b2, a.scales[3]);
        ++step_count_;

        EnvStepResult r;
        r.s_c = current_silhouette();
        r.reward = cfg_.k * r.s_c + cfg_.b;
        r.done = r.s_c >= cfg_.s_c_target || step_count_ >= cfg_.max_steps;
        r.obs = observe(r.s_c);
        return r;
    }

    // S_c of the frozen sample under the current parameters; -1 when the
    // classifier routes everything into one cluster.
    double current_silhouette() const {
        try {
            return silhouette_from_distances(distances_, m_, assignments(), n_).mean;
        } catch (const SingleClusterError&) {
            return -1.0;
        }
    }

    std::vector<std::size_t> assignments() const {
        std::vector<std::size_t> out(m_);
        for (std::size_t i = 0; i < m_; ++i) {
            Tensor<S> point = Tensor<S>::zeros({points_.dim(1)});
            for (std::size_t j = 0; j < points_.dim(1); ++j) point.data()[j] = points_.at(i, j);
            out[i] = assign_cluster(classify(point, current_));
        }
        return out;
    }

    Observation observe() const { return observe(current_silhouette()); }

private:
    Observation observe(double s_c) const {
        Observation obs;
        obs.reserve(obs_dim());
        obs.push_back(s_c);
        std::vector<std::size_t> counts(n_, 0);
        for (std::size_t a : assignments()) ++counts[a];
        for (std::size_t c : counts)
            obs.push_back(static_cast<double>(c) / static_cast<double>(m_));
        const Tensor<S>* groups[kClassifierGroups] = {&current_.w1, &current_.b1, &current_.w2,
                                                      &current_.b2};
        for (const Tensor<S>* g : groups) {
            double mean = 0.0;
            for (S v : g->data()) mean += static_cast<double>(v);
            mean /= static_cast<double>(g->numel());
            double var = 0.0;
            for (S v : g->data()) {
                const double d = static_cast<double>(v) - mean;
                var += d * d;
            }
            var /= static_cast<double>(g->numel());
            obs.push_back(mean);
            obs.push_back(std::sqrt(var));
        }
        return obs;
    }

    static void scale_group(Tensor<S>& t, double s) {
        for (auto& v : t.data()) v = static_cast<S>(static_cast<double>(v) * s);
    }

    EnvConfig cfg_;
    Tensor<S> points_;
    ClassifierParams<S> snapshot_;
    ClassifierParams<S> current_;
    std::size_t n_;
    std::size_t m_;
    std::vector<double> distances_;
    std::size_t step_count_ = 0;
    std::size_t clip_warnings_ = 0;
};

// Standardizes the classifier against the latent sample before the RL phase:
// every hidden unit's pre-activation and every logit is shifted and scaled to
// zero mean, unit variance over the sample. A raw random initialization is
// usually saturated on the latent cloud, which starts the environment in a
// collapsed single-cluster state where every multiplicative action is inert.
// No decoder loss is involved; this is initialization, and the RL phase owns
// the parameters from here on.
template <typename S>
void balance_classifier_init(ClassifierParams<S>& c, const Tensor<S>& latents) {
    const std::size_t m = latents.dim(0), d = latents.dim(1);
    if (m < 2) return;
    auto row_of = [&](std::size_t i) {
        Tensor<S> p = Tensor<S>::zeros({d});
        for (std::size_t j = 0; j < d; ++j) p.data()[j] = latents.at(i, j);
        return p;
    };
    auto standardize = [&](Tensor<S>& w, Tensor<S>& b, auto&& input_of) {
        const std::size_t units = w.dim(0);
        std::vector<double> mean(units, 0.0), var(units, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            Tensor<S> z = add(matvec(w, input_of(i)), b);
            for (std::size_t u = 0; u < units; ++u) mean[u] += static_cast<double>(z.data()[u]);
        }
        for (auto& v : mean) v /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            Tensor<S> z = add(matvec(w, input_of(i)), b);
            for (std::size_t u = 0; u < units; ++u) {
                const double dv = static_cast<double>(z.data()[u]) - mean[u];
                var[u] += dv * dv;
            }
        }
        for (std::size_t u = 0; u < units; ++u) {
            const double sigma = std::sqrt(var[u] / static_cast<double>(m));
            if (sigma <= 0) continue;
            for (std::size_t j = 0; j < w.dim(1); ++j)
                w.at(u, j) = static_cast<S>(static_cast<double>(w.at(u, j)) / sigma);
            b.data()[u] =
                static_cast<S>((static_cast<double>(b.data()[u]) - mean[u]) / sigma);
        }
    };
    standardize(c.w1, c.b1, row_of);
    standardize(c.w2, c.b2,
                [&](std::size_t i) { return relu(add(matvec(c.w1, row_of(i)), c.b1)); });
}

// Draws `candidates` fresh classifier initializations, balances each against
// the latent sample, and keeps the one whose argmax partition scores the best
// silhouette. A single random draw often starts the environment in a region
// the multiplicative action family cannot leave; screening the start point is
// still pure initialization (no decoder loss touches the parameters) and the
// RL phase owns every adjustment from here on.
template <typename S>
ClassifierParams<S> screen_classifier_init(const ClassifierParams<S>& original,
                                           const Tensor<S>& latents, std::size_t candidates,
                                           Rng rng) {
    const std::size_t m = latents.dim(0);
    const std::size_t n = original.n_clusters();
    const std::size_t d = latents.dim(1);
    const std::vector<double> dist = pairwise_distances(latents);

    auto score = [&](const ClassifierParams<S>& c) {
        std::vector<std::size_t> assign(m);
        for (std::size_t i = 0; i < m; ++i) {
            Tensor<S> p = Tensor<S>::zeros({d});
            for (std::size_t j = 0; j < d; ++j) p.data()[j] = latents.at(i, j);
            assign[i] = assign_cluster(classify(p, c));
        }
        try {
            return silhouette_from_distances(dist, m, assign, n).mean;
        } catch (const SingleClusterError&) {
            return -1.0;
        }
    };

    ClassifierParams<S> best = clone(original);
    balance_classifier_init(best, latents);
    double best_score = score(best);
    ModelDims dims;
    dims.latent = d;
    dims.hidden = d;
    dims.n_clusters = n;
    for (std::size_t k = 0; k + 1 < candidates; ++k) {
        Rng draw = rng.derive(k);
        ClassifierParams<S> cand = init_classifier<S>(dims, draw);
        balance_classifier_init(cand, latents);
        const double s = score(cand);
        if (s > best_score) {
            best_score = s;
            best = std::move(cand);
        }
    }
    return best;
}

struct TrajectoryRow {
    std::size_t step = 0;
    double s_c = -1.0;
    double reward = 0.0;
    bool done = false;
    double best_s_c = -1.0;  // running max
    std::array<double, kClassifierGroups> action{1.0, 1.0, 1.0, 1.0};
};

template <typename S>
struct EnhanceResult {
    ClassifierParams<S> best_params;
    double best_s_c = -1.0;
    bool reached_target = false;
    std::vector<TrajectoryRow> log;
};

// Runs SAC episodes against the environment until the silhouette target is
// reached or the total step budget is spent. A zero budget returns the
// snapshot parameters untouched.
template <typename S>
EnhanceResult<S> enhance_classifier(ClusterEnv<S>& env, SacAgent& agent, std::size_t step_budget,
                                    std::size_t warmup_steps) {
    EnhanceResult<S> result;
    result.best_params = clone(env.params());
    result.best_s_c = env.current_silhouette();
    if (step_budget == 0) return result;

    std::size_t total_steps = 0;
    while (total_steps < step_budget && !result.reached_target) {
        Observation obs = env.reset();
        bool done = false;
        bool fresh_episode = true;
        while (!done && total_steps < step_budget) {
            const std::vector<double> act_vec = total_steps < warmup_steps
                                                    ? agent.exploration_action(fresh_episode)
                                                    : agent.act(obs, /*stochastic=*/true);
            fresh_episode = false;
            Action action;
            for (std::size_t i = 0; i < kClassifierGroups; ++i) action.scales[i] = act_vec[i];
            EnvStepResult sr = env.step(action);
            ++total_steps;
            agent.observe({obs, act_vec, sr.reward, sr.obs, sr.done});
            if (agent.ready()) agent.update();

            if (sr.s_c > result.best_s_c) {
                result.best_s_c = sr.s_c;
                result.best_params = clone(env.params());
            }
            TrajectoryRow row;
            row.step = total_steps;
            row.s_c = sr.s_c;
            row.reward = sr.reward;
            row.done = sr.done;
            row.best_s_c = result.best_s_c;
            row.action = action.scales;
            result.log.push_back(row);

            if (sr.s_c >= env.config().s_c_target) result.reached_target = true;
            done = sr.done;
            obs = sr.obs;
        }
    }
    return result;
}

// Tab-separated trajectory log; values printed with 17 significant digits so
// rewards recompute exactly after a text round trip.
inline void write_trajectory(const std::string& path, const std::vector<TrajectoryRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("trajectory: cannot write " + path);
    out << "step\ts_c\treward\tdone\tbest_s_c\ta1\ta2\ta3\ta4\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.step << '\t' << r.s_c << '\t' << r.reward << '\t' << (r.done ? 1 : 0) << '\t'
            << r.best_s_c;
        for (double a : r.action) out << '\t' << a;
        out << '\n';
    }
}

inline std::vector<TrajectoryRow> read_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("trajectory: cannot read " + path);
    std::vector<TrajectoryRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrajectoryRow r;
        std::istringstream is(line);
        int done_flag = 0;
        is >> r.step >> r.s_c >> r.reward >> done_flag >> r.best_s_c;
        for (auto& a : r.action) is >> a;
        if (!is) throw IoError("trajectory: malformed row in " + path);
        r.done = done_flag != 0;
        rows.push_back(r);
    }
    return rows;
}

}  // namespace lms2s
