#pragma once

// Soft actor-critic for small continuous action spaces. Squashed-Gaussian
// MLP policy, twin Q networks with Polyak-averaged targets, auto-tuned
// entropy temperature (target entropy = -action_dim). Everything runs in
// 64-bit regardless of the model precision; observations pass through a
// fixed sign(x)*log1p(|x|) compression before the networks, since parameter
// statistics can span orders of magnitude under multiplicative actions.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "lms2s/adam.hpp"
#include "lms2s/common.hpp"
#include "lms2s/rng.hpp"
#include "lms2s/tensor.hpp"

namespace lms2s {

struct SacTransition {
    std::vector<double> obs;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_obs;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void add(SacTransition t) {
        if (data_.size() < capacity_) {
            data_.push_back(std::move(t));
        } else {
            data_[write_] = std::move(t);
        }
        write_ = (write_ + 1) % capacity_;
    }

    std::size_t size() const { return data_.size(); }

    std::vector<SacTransition> sample(std::size_t batch, Rng& rng) const {
        std::vector<SacTransition> out;
        out.reserve(batch);
        for (std::size_t i = 0; i < batch; ++i)
            out.push_back(data_[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(data_.size()) - 1))]);
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t write_ = 0;
    std::vector<SacTransition> data_;
};

namespace detail {

// Two-hidden-layer ReLU MLP on double tensors.
struct Mlp {
    std::vector<Tensor<double>> weights;  // [out x in] per layer
    std::vector<Tensor<double>> biases;

    static Mlp make(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
        Mlp net;
        const std::size_t dims[4] = {in, hidden, hidden, out};
        for (int l = 0; l < 3; ++l) {
            net.weights.push_back(xavier_uniform<double>(dims[l + 1], dims[l], rng));
            net.biases.push_back(Tensor<double>::zeros({dims[l + 1]}));
        }
        return net;
    }

    // X: [B x in] -> [B x out]
    Tensor<double> forward(const Tensor<double>& x) const {
        Tensor<double> h = x;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            h = add_rowvec(matmul(h, transpose(weights[l])), biases[l]);
            if (l + 1 < weights.size()) h = relu(h);
        }
        return h;
    }

    std::vector<Tensor<double>> params() {
        std::vector<Tensor<double>> out;
        for (auto& w : weights) out.push_back(w);
        for (auto& b : biases) out.push_back(b);
        return out;
    }

    void set_trainable(bool v) {
        for (auto& w : weights) w.set_requires_grad(v);
        for (auto& b : biases) b.set_requires_grad(v);
    }

    Mlp clone_net() const {
        Mlp c;
        for (const auto& w : weights) c.weights.push_back(w.clone());
        for (const auto& b : biases) c.biases.push_back(b.clone());
        return c;
    }
};

inline double squash_obs(double v) { return v >= 0.0 ? std::log1p(v) : -std::log1p(-v); }

}  // namespace detail

struct SacHyper {
    std::size_t obs_dim = 0;
    std::size_t act_dim = 0;
    std::size_t hidden = 64;
    double lr = 3e-4;
    std::size_t batch = 64;
    std::size_t buffer = 10000;
    double gamma = 0.99;
    double tau = 0.005;
    double act_center = 1.0;  // actions are center + half * tanh(u)
    double act_half = 0.5;
    std::uint64_t seed = 0;
};

struct SacDiagnostics {
    double q_loss = 0.0;
    double policy_loss = 0.0;
    double alpha = 0.0;
    double entropy_estimate = 0.0;
};

class SacAgent {
public:
    explicit SacAgent(const SacHyper& h)
        : h_(h),
          rng_(Rng(h.seed).derive(17)),
          buffer_(h.buffer),
          policy_(detail::Mlp::make(h.obs_dim, h.hidden, 2 * h.act_dim, rng_)),
          q1_(detail::Mlp::make(h.obs_dim + h.act_dim, h.hidden, 1, rng_)),
          q2_(detail::Mlp::make(h.obs_dim + h.act_dim, h.hidden, 1, rng_)),
          q1_target_(q1_.clone_net()),
          q2_target_(q2_.clone_net()),
          log_alpha_(Tensor<double>::scalar(0.0)),
          policy_opt_(policy_.params(), {h.lr}),
          q_opt_(joined_q_params(), {h.lr}),
          alpha_opt_({log_alpha_}, {h.lr}) {
        policy_.set_trainable(true);
        q1_.set_trainable(true);
        q2_.set_trainable(true);
        log_alpha_.set_requires_grad(true);
    }

    // Stochastic (training) or mean (greedy) action for one observation.
    std::vector<double> act(const std::vector<double>& obs, bool stochastic) {
        Tensor<double> x = featurize({obs});
        Tensor<double> head = policy_.forward(x);
        std::vector<double> action(h_.act_dim);
        for (std::size_t a = 0; a < h_.act_dim; ++a) {
            const double mu = head.at(0, a);
            double u = mu;
            if (stochastic) {
                const double log_std = bounded_log_std(head.at(0, h_.act_dim + a));
                u += std::exp(log_std) * rng_.normal();
            }
            action[a] = h_.act_center + h_.act_half * std::tanh(u);
        }
        return action;
    }

    std::vector<double> random_action() {
        std::vector<double> action(h_.act_dim);
        for (auto& a : action)
            a = rng_.uniform(h_.act_center - h_.act_half, h_.act_center + h_.act_half);
        return action;
    }

    // Warmup exploration: a persistent random walk. Repeating the previous
    // draw with high probability makes the cumulative effect of compounding
    // actions ballistic rather than diffusive, which covers far more of the
    // multiplicative-scale space within an episode.
    std::vector<double> exploration_action(bool reset_persistence) {
        if (reset_persistence || last_exploration_.empty() || rng_.next_double() < 0.25)
            last_exploration_ = random_action();
        return last_exploration_;
    }

    void observe(SacTransition t) { buffer_.add(std::move(t)); }
    bool ready() const { return buffer_.size() >= h_.batch; }
    const ReplayBuffer& buffer() const { return buffer_; }
    double alpha() const { return std::exp(log_alpha_.value()); }

    SacDiagnostics update() {
        if (!ready()) throw ContractError("sac update: replay buffer smaller than batch");
        return update_on(buffer_.sample(h_.batch, rng_));
    }

    // One SAC gradient step on an explicit batch of transitions.
    SacDiagnostics update_on(const std::vector<SacTransition>& batch);

private:
    std::vector<Tensor<double>> joined_q_params() {
        auto p = q1_.params();
        for (auto& t : q2_.params()) p.push_back(t);
        return p;
    }

    static double bounded_log_std(double raw) {
        // Smooth bound into [-5, 2].
        return -5.0 + 3.5 * (std::tanh(raw) + 1.0);
    }

    Tensor<double> featurize(const std::vector<std::vector<double>>& rows) const {
        Tensor<double> x = Tensor<double>::zeros({rows.size(), h_.obs_dim});
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < h_.obs_dim; ++c)
                x.at(r, c) = detail::squash_obs(rows[r][c]);
        return x;
    }

    // Differentiable squashed-Gaussian sample for a featurized batch.
    struct PolicySample {
        Tensor<double> action;   // [B x A], in env units
        Tensor<double> log_pi;   // [B]
    };

    PolicySample sample_policy(const Tensor<double>& x, const Tensor<double>& eps) {
        const std::size_t b = x.dim(0), a_dim = h_.act_dim;
        Tensor<double> head = policy_.forward(x);
        // Split mean / raw-log-std columns.
        // Column split of head [B x 2A] into mean and raw-log-std halves,
        // done with fixed selector matrices so the split stays on the tape.
        Tensor<double> sel_mu = Tensor<double>::zeros({2 * a_dim, a_dim});
        Tensor<double> sel_raw = Tensor<double>::zeros({2 * a_dim, a_dim});
        for (std::size_t i = 0; i < a_dim; ++i) {
            sel_mu.at(i, i) = 1.0;
            sel_raw.at(a_dim + i, i) = 1.0;
        }
        Tensor<double> mu = matmul(head, sel_mu);
        Tensor<double> raw = matmul(head, sel_raw);
        // log_std = -5 + 3.5*(tanh(raw)+1), std = exp(log_std)
        Tensor<double> log_std = add_scalar(mul_scalar(tanh_op(raw), 3.5), -1.5);
        Tensor<double> std_dev = exp_op(log_std);
        Tensor<double> u = add(mu, mul(std_dev, eps));
        Tensor<double> t = tanh_op(u);
        PolicySample out;
        out.action = add_scalar(mul_scalar(t, h_.act_half), h_.act_center);
        // log N(u; mu, std) with u = mu + std*eps: -0.5 eps^2 - 0.5 log 2pi - log_std
        Tensor<double> gauss_const = Tensor<double>::zeros({b, a_dim});
        for (std::size_t r = 0; r < b; ++r)
            for (std::size_t c = 0; c < a_dim; ++c)
                gauss_const.at(r, c) =
                    -0.5 * eps.at(r, c) * eps.at(r, c) - 0.5 * std::log(2.0 * std::numbers::pi);
        Tensor<double> log_gauss = sub(gauss_const, log_std);
        // tanh-squash correction: log(half * (1 - t^2) + 1e-6)
        Tensor<double> one = Tensor<double>::full({b, a_dim}, 1.0);
        Tensor<double> correction =
            log_op(add_scalar(mul_scalar(sub(one, mul(t, t)), h_.act_half), 1e-6));
        out.log_pi = sum_rows(sub(log_gauss, correction));
        return out;
    }

    Tensor<double> q_value(detail::Mlp& net, const Tensor<double>& x, const Tensor<double>& act) {
        // Q nets see actions in normalized units.
        Tensor<double> a_norm = mul_scalar(add_scalar(act, -h_.act_center), 1.0 / h_.act_half);
        return sum_rows(net.forward(concat_cols(x, a_norm)));
    }

    SacHyper h_;
    Rng rng_;
    ReplayBuffer buffer_;
    detail::Mlp policy_, q1_, q2_, q1_target_, q2_target_;
    Tensor<double> log_alpha_;
    Adam<double> policy_opt_, q_opt_, alpha_opt_;
    std::vector<double> last_exploration_;
};

inline SacDiagnostics SacAgent::update_on(const std::vector<SacTransition>& batch) {
    if (batch.size() < 1) throw ContractError("sac update: empty batch");
    const std::size_t b = batch.size();
    SacDiagnostics diag;
    diag.alpha = alpha();

    std::vector<std::vector<double>> obs_rows, next_rows;
    obs_rows.reserve(b);
    next_rows.reserve(b);
    for (const auto& t : batch) {
        obs_rows.push_back(t.obs);
        next_rows.push_back(t.next_obs);
    }
    Tensor<double> x = featurize(obs_rows);
    Tensor<double> x_next = featurize(next_rows);
    Tensor<double> act_taken = Tensor<double>::zeros({b, h_.act_dim});
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t c = 0; c < h_.act_dim; ++c) act_taken.at(r, c) = batch[r].action[c];

    auto draw_eps = [&](std::size_t rows) {
        Tensor<double> e = Tensor<double>::zeros({rows, h_.act_dim});
        for (auto& v : e.data()) v = rng_.normal();
        return e;
    };

    // Bellman targets (no tape).
    std::vector<double> targets(b);
    {
        PolicySample next = sample_policy(x_next, draw_eps(b));
        Tensor<double> q1n = q_value(q1_target_, x_next, next.action);
        Tensor<double> q2n = q_value(q2_target_, x_next, next.action);
        for (std::size_t r = 0; r < b; ++r) {
            const double qmin = std::min(q1n.at(r), q2n.at(r));
            const double soft = qmin - diag.alpha * next.log_pi.at(r);
            targets[r] = batch[r].reward + (batch[r].done ? 0.0 : h_.gamma * soft);
        }
    }

    // Twin-Q regression.
    {
        GradTape<double> tape;
        GradTape<double>::Scope scope(tape);
        q_opt_.zero_grad();
        Tensor<double> y = Tensor<double>::from_vector(targets, {b});
        Tensor<double> d1 = sub(q_value(q1_, x, act_taken), y);
        Tensor<double> d2 = sub(q_value(q2_, x, act_taken), y);
        Tensor<double> loss = add(mean(mul(d1, d1)), mean(mul(d2, d2)));
        diag.q_loss = loss.value();
        tape.backward(loss);
        q_opt_.step();
    }

    // Policy step (Q nets fixed: their grads are zeroed afterwards).
    {
        GradTape<double> tape;
        GradTape<double>::Scope scope(tape);
        policy_opt_.zero_grad();
        q_opt_.zero_grad();
        PolicySample cur = sample_policy(x, draw_eps(b));
        Tensor<double> qmin = minimum(q_value(q1_, x, cur.action), q_value(q2_, x, cur.action));
        Tensor<double> loss = mean(sub(mul_scalar(cur.log_pi, diag.alpha), qmin));
        diag.policy_loss = loss.value();
        diag.entropy_estimate = -mean(cur.log_pi).value();
        tape.backward(loss);
        policy_opt_.step();
        q_opt_.zero_grad();
    }

    // Temperature: drive entropy toward -act_dim.
    {
        const double target_entropy = -static_cast<double>(h_.act_dim);
        const double gap = -diag.entropy_estimate + target_entropy;  // mean(log_pi) + target
        GradTape<double> tape;
        GradTape<double>::Scope scope(tape);
        alpha_opt_.zero_grad();
        Tensor<double> loss = mul_scalar(log_alpha_, -gap);
        tape.backward(loss);
        alpha_opt_.step();
    }

    // Polyak averaging, written as targ += tau * (main - targ) so an
    // identical pair stays bit-identical.
    auto polyak = [&](detail::Mlp& main, detail::Mlp& targ) {
        auto mp = main.params();
        auto tp = targ.params();
        for (std::size_t i = 0; i < mp.size(); ++i)
            for (std::size_t j = 0; j < mp[i].numel(); ++j)
                tp[i].data()[j] += h_.tau * (mp[i].data()[j] - tp[i].data()[j]);
    };
    polyak(q1_, q1_target_);
    polyak(q2_, q2_target_);
    return diag;
}

}  // namespace lms2s
