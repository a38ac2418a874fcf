#pragma once

// Network pieces: bi-directional LSTM encoder, latent-space enhancer,
// cluster classifier, and attention-equipped LSTM decoders (the dummy
// decoder used for joint pre-training and the per-cluster filters).

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lms2s/clustering.hpp"
#include "lms2s/common.hpp"
#include "lms2s/rng.hpp"
#include "lms2s/tensor.hpp"

namespace lms2s {

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kSosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;

// Training-time stochastic state; default-constructed means eval mode.
struct DropoutCfg {
    double rate = 0.0;
    Rng* rng = nullptr;
};

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

template <typename S>
struct LstmParams {
    Tensor<S> w_ih;  // [4H x E]
    Tensor<S> w_hh;  // [4H x H]
    Tensor<S> bias;  // [4H], gate order i, f, g, o
    std::size_t hidden() const { return w_hh.dim(1); }
    std::size_t input() const { return w_ih.dim(1); }
};

template <typename S>
struct LstmState {
    Tensor<S> h;
    Tensor<S> c;
};

template <typename S>
LstmState<S> lstm_zero_state(std::size_t hidden) {
    return {Tensor<S>::zeros({hidden}), Tensor<S>::zeros({hidden})};
}

// One recurrence step. Gates i,f,o are sigmoid of affine pre-activations, the
// candidate g is tanh; c' = f*c + i*g, h' = o*tanh(c'). The returned state's
// h is the cell output.
template <typename S>
LstmState<S> lstm_cell_step(const Tensor<S>& x, const LstmState<S>& state,
                            const LstmParams<S>& p) {
    const std::size_t h_dim = p.hidden();
    if (x.rank() != 1 || x.dim(0) != p.input())
        throw ShapeError("lstm_cell_step: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(p.w_ih.shape()));
    if (state.h.dim(0) != h_dim || state.c.dim(0) != h_dim)
        throw ShapeError("lstm_cell_step: state " + shape_str(state.h.shape()) + " vs hidden " +
                         std::to_string(h_dim));
    Tensor<S> pre = add(add(matvec(p.w_ih, x), matvec(p.w_hh, state.h)), p.bias);
    Tensor<S> i_gate = sigmoid(slice(pre, 0, h_dim));
    Tensor<S> f_gate = sigmoid(slice(pre, h_dim, h_dim));
    Tensor<S> g_cand = tanh_op(slice(pre, 2 * h_dim, h_dim));
    Tensor<S> o_gate = sigmoid(slice(pre, 3 * h_dim, h_dim));
    Tensor<S> c_new = add(mul(f_gate, state.c), mul(i_gate, g_cand));
    Tensor<S> h_new = mul(o_gate, tanh_op(c_new));
    return {h_new, c_new};
}

// Runs a cell over a sequence of input vectors, returning every state.
// The encoder's backward direction is exactly this pass over the reversed
// embedding sequence.
template <typename S>
std::vector<LstmState<S>> run_lstm(const LstmParams<S>& p,
                                   const std::vector<Tensor<S>>& inputs) {
    std::vector<LstmState<S>> states;
    states.reserve(inputs.size());
    LstmState<S> st = lstm_zero_state<S>(p.hidden());
    for (const auto& x : inputs) {
        st = lstm_cell_step(x, st, p);
        states.push_back(st);
    }
    return states;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

template <typename S>
struct EncoderParams {
    Tensor<S> embedding;  // [V x E]
    LstmParams<S> fwd;
    std::optional<LstmParams<S>> bwd;  // absent when unidirectional
    bool bidirectional() const { return bwd.has_value(); }
    std::size_t out_dim() const { return fwd.hidden() * (bidirectional() ? 2 : 1); }
};

template <typename S>
struct EncoderOutput {
    Tensor<S> step_outputs;  // [L x out_dim]
    Tensor<S> final_hidden;  // [out_dim]
    Tensor<S> final_cell;    // [out_dim]
};

template <typename S>
EncoderOutput<S> encode(std::span<const TokenId> tokens, const EncoderParams<S>& p,
                        const DropoutCfg& drop = {}) {
    if (tokens.empty()) throw ContractError("encode: empty token sequence");
    const std::size_t L = tokens.size();
    std::vector<Tensor<S>> embedded;
    embedded.reserve(L);
    for (TokenId t : tokens) embedded.push_back(dropout(row(p.embedding, t), drop.rate, drop.rng));

    std::vector<LstmState<S>> fwd_states = run_lstm(p.fwd, embedded);
    std::vector<Tensor<S>> out_rows;
    out_rows.reserve(L);
    EncoderOutput<S> out;
    if (p.bidirectional()) {
        std::vector<Tensor<S>> reversed(embedded.rbegin(), embedded.rend());
        std::vector<LstmState<S>> bwd_states = run_lstm(*p.bwd, reversed);
        for (std::size_t t = 0; t < L; ++t)
            out_rows.push_back(concat(fwd_states[t].h, bwd_states[L - 1 - t].h));
        out.final_hidden = concat(fwd_states.back().h, bwd_states.back().h);
        out.final_cell = concat(fwd_states.back().c, bwd_states.back().c);
    } else {
        for (std::size_t t = 0; t < L; ++t) out_rows.push_back(fwd_states[t].h);
        out.final_hidden = fwd_states.back().h;
        out.final_cell = fwd_states.back().c;
    }
    for (auto& r : out_rows) r = dropout(r, drop.rate, drop.rng);
    out.step_outputs = stack_rows(out_rows);
    return out;
}

// ---------------------------------------------------------------------------
// Enhancer: two-layer MLP from the encoder's final hidden state into the
// latent space (tanh after the first layer, linear second layer).
// ---------------------------------------------------------------------------

template <typename S>
struct EnhancerParams {
    Tensor<S> w1, b1;  // [D x out_dim], [D]
    Tensor<S> w2, b2;  // [D x D], [D]
    std::size_t latent_dim() const { return w2.dim(0); }
};

template <typename S>
Tensor<S> enhance(const Tensor<S>& final_hidden, const EnhancerParams<S>& p) {
    Tensor<S> hid = tanh_op(add(matvec(p.w1, final_hidden), p.b1));
    return add(matvec(p.w2, hid), p.b2);
}

// ---------------------------------------------------------------------------
// Cluster classifier: linear -> ReLU -> linear -> softmax.
// ---------------------------------------------------------------------------

template <typename S>
struct ClassifierParams {
    Tensor<S> w1, b1;  // [D x D], [D]
    Tensor<S> w2, b2;  // [n x D], [n]
    std::size_t n_clusters() const { return w2.dim(0); }
};

template <typename S>
Tensor<S> classify(const Tensor<S>& latent, const ClassifierParams<S>& p) {
    if (p.n_clusters() < 1) throw ConfigError("classify: cluster count must be >= 1");
    Tensor<S> hid = relu(add(matvec(p.w1, latent), p.b1));
    return softmax(add(matvec(p.w2, hid), p.b2));
}

// ---------------------------------------------------------------------------
// Attention + decoder
// ---------------------------------------------------------------------------

template <typename S>
struct DecoderParams {
    Tensor<S> embedding;  // [V x E]
    LstmParams<S> cell;   // input E, hidden H
    Tensor<S> attn_proj;  // [H x enc_out_dim]
    Tensor<S> w_out;      // [V x 2H]
    Tensor<S> b_out;      // [V]
    std::size_t hidden() const { return cell.hidden(); }
    std::size_t vocab() const { return w_out.dim(0); }
};

template <typename S>
struct AttendResult {
    Tensor<S> context;  // [H]
    Tensor<S> weights;  // [L]
};

// Encoder step outputs mapped into decoder-hidden space, [L x H].
template <typename S>
Tensor<S> project_steps(const EncoderOutput<S>& enc, const Tensor<S>& attn_proj) {
    return matmul(enc.step_outputs, transpose(attn_proj));
}

// Dot-product attention over pre-projected encoder steps.
template <typename S>
AttendResult<S> attend_projected(const Tensor<S>& dec_hidden, const Tensor<S>& proj_steps) {
    Tensor<S> scores = matvec(proj_steps, dec_hidden);
    Tensor<S> weights = softmax(scores);
    Tensor<S> context = matvec_t(proj_steps, weights);
    return {context, weights};
}

template <typename S>
AttendResult<S> attend(const Tensor<S>& dec_hidden, const EncoderOutput<S>& enc,
                       const Tensor<S>& attn_proj) {
    return attend_projected(dec_hidden, project_steps(enc, attn_proj));
}

template <typename S>
struct DecoderState {
    LstmState<S> st;
    TokenId prev_token = kSosId;  // previous output token; embedded at step start
};

// First decoder state: latent point as the initial hidden, zero cell,
// start-of-sequence as the previous token.
template <typename S>
DecoderState<S> decoder_init(const Tensor<S>& latent, const DecoderParams<S>& p) {
    if (latent.dim(0) != p.hidden())
        throw ShapeError("decoder_init: latent " + shape_str(latent.shape()) +
                         " vs decoder hidden " + std::to_string(p.hidden()));
    return {{latent, Tensor<S>::zeros({p.hidden()})}, kSosId};
}

template <typename S>
struct DecodeStepResult {
    Tensor<S> logits;  // [V]
    DecoderState<S> state;
};

// One decoding step: embed the previous token, advance the LSTM, attend over
// the projected encoder steps, then project [hidden; context] to vocab logits.
template <typename S>
DecodeStepResult<S> decode_step_projected(const DecoderState<S>& state,
                                          const Tensor<S>& proj_steps, const DecoderParams<S>& p,
                                          const DropoutCfg& drop = {}) {
    Tensor<S> x = dropout(row(p.embedding, state.prev_token), drop.rate, drop.rng);
    LstmState<S> next = lstm_cell_step(x, state.st, p.cell);
    AttendResult<S> att = attend_projected(next.h, proj_steps);
    Tensor<S> h_out = dropout(next.h, drop.rate, drop.rng);
    Tensor<S> logits = add(matvec(p.w_out, concat(h_out, att.context)), p.b_out);
    return {logits, {next, state.prev_token}};
}

template <typename S>
DecodeStepResult<S> decode_step(const DecoderState<S>& state, const EncoderOutput<S>& enc,
                                const DecoderParams<S>& p, const DropoutCfg& drop = {}) {
    return decode_step_projected(state, project_steps(enc, p.attn_proj), p, drop);
}

// Greedy argmax decoding; stops on end-of-sequence or max_len. The pad token
// is never emitted. Ties break to the lowest index.
template <typename S>
std::vector<TokenId> greedy_decode(const Tensor<S>& latent, const EncoderOutput<S>& enc,
                                   const DecoderParams<S>& p, std::size_t max_len) {
    std::vector<TokenId> out;
    if (max_len == 0) return out;
    Tensor<S> proj = project_steps(enc, p.attn_proj);
    DecoderState<S> state = decoder_init(latent, p);
    for (std::size_t step = 0; step < max_len; ++step) {
        DecodeStepResult<S> r = decode_step_projected(state, proj, p);
        std::size_t best = 0;
        S best_val = std::numeric_limits<S>::lowest();
        for (std::size_t v = 0; v < r.logits.dim(0); ++v) {
            if (static_cast<TokenId>(v) == kPadId) continue;
            if (r.logits.data()[v] > best_val) {
                best_val = r.logits.data()[v];
                best = v;
            }
        }
        if (static_cast<TokenId>(best) == kEosId) break;
        out.push_back(static_cast<TokenId>(best));
        state = r.state;
        state.prev_token = static_cast<TokenId>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole model + parameter-group view
// ---------------------------------------------------------------------------

template <typename S>
struct Model {
    EncoderParams<S> encoder;
    EnhancerParams<S> enhancer;
    ClassifierParams<S> classifier;
    std::optional<DecoderParams<S>> dummy_decoder;  // phase-1 only
    std::vector<DecoderParams<S>> filters;          // phase-3 product
    bool encoder_frozen = false;
    bool enhancer_frozen = false;
};

template <typename S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

template <typename S>
struct GroupView {
    std::string name;
    bool frozen = false;
    std::vector<NamedParam<S>> params;
};

namespace detail {

template <typename S>
std::vector<NamedParam<S>> decoder_params(DecoderParams<S>& d) {
    return {{"embedding", d.embedding}, {"w_ih", d.cell.w_ih},   {"w_hh", d.cell.w_hh},
            {"bias", d.cell.bias},      {"attn_proj", d.attn_proj}, {"w_out", d.w_out},
            {"b_out", d.b_out}};
}

}  // namespace detail

// Stable, ordered view of every parameter group. Tensors are shared with the
// model, so mutating through the view mutates the model.
template <typename S>
std::vector<GroupView<S>> param_groups(Model<S>& m) {
    std::vector<GroupView<S>> groups;
    GroupView<S> enc{"encoder", m.encoder_frozen, {}};
    enc.params = {{"embedding", m.encoder.embedding},
                  {"fwd.w_ih", m.encoder.fwd.w_ih},
                  {"fwd.w_hh", m.encoder.fwd.w_hh},
                  {"fwd.bias", m.encoder.fwd.bias}};
    if (m.encoder.bwd) {
        enc.params.push_back({"bwd.w_ih", m.encoder.bwd->w_ih});
        enc.params.push_back({"bwd.w_hh", m.encoder.bwd->w_hh});
        enc.params.push_back({"bwd.bias", m.encoder.bwd->bias});
    }
    groups.push_back(std::move(enc));
    groups.push_back({"enhancer",
                      m.enhancer_frozen,
                      {{"w1", m.enhancer.w1},
                       {"b1", m.enhancer.b1},
                       {"w2", m.enhancer.w2},
                       {"b2", m.enhancer.b2}}});
    groups.push_back({"classifier",
                      false,
                      {{"w1", m.classifier.w1},
                       {"b1", m.classifier.b1},
                       {"w2", m.classifier.w2},
                       {"b2", m.classifier.b2}}});
    if (m.dummy_decoder)
        groups.push_back({"dummy_decoder", false, detail::decoder_params(*m.dummy_decoder)});
    for (std::size_t i = 0; i < m.filters.size(); ++i)
        groups.push_back({"filter_" + std::to_string(i + 1), false,
                          detail::decoder_params(m.filters[i])});
    return groups;
}

template <typename S>
std::vector<Tensor<S>> group_tensors(const GroupView<S>& g) {
    std::vector<Tensor<S>> out;
    for (const auto& p : g.params) out.push_back(p.tensor);
    return out;
}

// ---------------------------------------------------------------------------
// Initialization. Weight matrices are Xavier-uniform, biases zero except the
// LSTM forget gate (+1) and the classifier (small uniform: multiplicative
// group-rescaling actions are inert on zero biases).
// ---------------------------------------------------------------------------

struct ModelDims {
    std::size_t vocab = 0;
    std::size_t embed = 150;
    std::size_t hidden = 200;
    std::size_t latent = 200;
    std::size_t n_clusters = 2;
    bool bidirectional = true;
    // Gain on the enhancer's first-layer init. Driving the tanh layer toward
    // saturation at init makes the latent geometry favor sign patterns of the
    // hidden state over magnitude directions such as sequence length.
    double enhancer_gain = 1.0;
    std::size_t enc_out() const { return hidden * (bidirectional ? 2 : 1); }
};

template <typename S>
LstmParams<S> init_lstm(std::size_t hidden, std::size_t input, Rng& rng) {
    LstmParams<S> p;
    p.w_ih = xavier_uniform<S>(4 * hidden, input, rng);
    p.w_hh = xavier_uniform<S>(4 * hidden, hidden, rng);
    p.bias = Tensor<S>::zeros({4 * hidden});
    for (std::size_t i = hidden; i < 2 * hidden; ++i) p.bias.data()[i] = S(1);  // forget gate
    return p;
}

template <typename S>
DecoderParams<S> init_decoder(const ModelDims& d, Rng& rng) {
    DecoderParams<S> p;
    p.embedding = xavier_uniform<S>(d.vocab, d.embed, rng);
    p.cell = init_lstm<S>(d.hidden, d.embed, rng);
    p.attn_proj = xavier_uniform<S>(d.hidden, d.enc_out(), rng);
    p.w_out = xavier_uniform<S>(d.vocab, 2 * d.hidden, rng);
    p.b_out = Tensor<S>::zeros({d.vocab});
    return p;
}

template <typename S>
ClassifierParams<S> init_classifier(const ModelDims& d, Rng& rng) {
    ClassifierParams<S> p;
    p.w1 = xavier_uniform<S>(d.latent, d.latent, rng);
    const double r1 = 1.0 / std::sqrt(static_cast<double>(d.latent));
    p.b1 = uniform_tensor<S>({d.latent}, -r1, r1, rng);
    p.w2 = xavier_uniform<S>(d.n_clusters, d.latent, rng);
    p.b2 = uniform_tensor<S>({d.n_clusters}, -r1, r1, rng);
    return p;
}

template <typename S>
Model<S> init_model(const ModelDims& d, Rng& rng) {
    if (d.latent != d.hidden)
        throw ConfigError("init_model: latent dim must equal hidden dim (latent feeds the "
                          "decoder's initial hidden state)");
    Model<S> m;
    m.encoder.embedding = xavier_uniform<S>(d.vocab, d.embed, rng);
    m.encoder.fwd = init_lstm<S>(d.hidden, d.embed, rng);
    if (d.bidirectional) m.encoder.bwd = init_lstm<S>(d.hidden, d.embed, rng);
    m.enhancer.w1 = mul_scalar(xavier_uniform<S>(d.latent, d.enc_out(), rng),
                               static_cast<S>(d.enhancer_gain));
    m.enhancer.b1 = Tensor<S>::zeros({d.latent});
    m.enhancer.w2 = xavier_uniform<S>(d.latent, d.latent, rng);
    m.enhancer.b2 = Tensor<S>::zeros({d.latent});
    m.classifier = init_classifier<S>(d, rng);
    m.dummy_decoder = init_decoder<S>(d, rng);
    return m;
}

// ---------------------------------------------------------------------------
// Freezing and cloning
// ---------------------------------------------------------------------------

template <typename S>
void set_trainable(std::vector<NamedParam<S>>& params, bool trainable) {
    for (auto& p : params) p.tensor.set_requires_grad(trainable);
}

template <typename S>
void mark_trainable(Model<S>& m) {
    auto groups = param_groups(m);
    for (auto& g : groups) {
        const bool trainable = !g.frozen && g.name != "classifier";
        set_trainable(g.params, trainable);
    }
}

template <typename S>
void freeze_encoder_enhancer(Model<S>& m) {
    m.encoder_frozen = true;
    m.enhancer_frozen = true;
    mark_trainable(m);
}

template <typename S>
LstmParams<S> clone(const LstmParams<S>& p) {
    return {p.w_ih.clone(), p.w_hh.clone(), p.bias.clone()};
}

template <typename S>
DecoderParams<S> clone(const DecoderParams<S>& p) {
    return {p.embedding.clone(), clone(p.cell), p.attn_proj.clone(), p.w_out.clone(),
            p.b_out.clone()};
}

template <typename S>
ClassifierParams<S> clone(const ClassifierParams<S>& p) {
    return {p.w1.clone(), p.b1.clone(), p.w2.clone(), p.b2.clone()};
}

}  // namespace lms2s
