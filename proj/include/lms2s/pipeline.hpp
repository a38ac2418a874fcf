#pragma once

// Three-phase training orchestration:
//   1. joint training of encoder + enhancer + dummy decoder, then freeze the
//      encoder and enhancer and drop the dummy decoder;
//   2. RL enhancement of the cluster classifier (cluster_env.hpp);
//   3. independent per-cluster filter training, followed by evaluation.
//
// All randomness is derived from the config seed through fixed stream ids so
// each phase is reproducible in isolation.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "lms2s/adam.hpp"
#include "lms2s/clustering.hpp"
#include "lms2s/cluster_env.hpp"
#include "lms2s/common.hpp"
#include "lms2s/config.hpp"
#include "lms2s/data.hpp"
#include "lms2s/metrics.hpp"
#include "lms2s/pca.hpp"
#include "lms2s/seq2seq.hpp"

namespace lms2s {

// Seed stream ids.
inline constexpr std::uint64_t kStreamGen = 1;
inline constexpr std::uint64_t kStreamInit = 2;
inline constexpr std::uint64_t kStreamPhase1 = 3;
inline constexpr std::uint64_t kStreamLatentSample = 4;
inline constexpr std::uint64_t kStreamSac = 5;
inline constexpr std::uint64_t kStreamFilterInit = 6;
inline constexpr std::uint64_t kStreamFilterBase = 100;  // + filter index

template <typename S>
ModelDims dims_from_config(const PipelineConfig& cfg, std::size_t vocab) {
    ModelDims d;
    d.vocab = vocab;
    d.embed = cfg.embed_dim;
    d.hidden = cfg.hidden_dim;
    d.latent = cfg.latent_dim;
    d.n_clusters = cfg.n_filters;
    d.bidirectional = cfg.bidirectional;
    d.enhancer_gain = cfg.enhancer_gain;
    return d;
}

template <typename S>
std::vector<S> pad_masked_weights(std::size_t vocab) {
    std::vector<S> w(vocab, S(1));
    w[static_cast<std::size_t>(kPadId)] = S(0);
    return w;
}

// Teacher-forced sequence loss for one pair: inputs are <sos> + target,
// labels are target + <eos>.
template <typename S>
Tensor<S> pair_loss(const SentencePair& pair, const EncoderParams<S>& enc_p,
                    const EnhancerParams<S>& enh_p, const DecoderParams<S>& dec_p,
                    std::span<const S> class_weights, const DropoutCfg& drop = {}) {
    EncoderOutput<S> enc = encode<S>(pair.source, enc_p, drop);
    Tensor<S> latent = enhance(enc.final_hidden, enh_p);
    Tensor<S> proj = project_steps(enc, dec_p.attn_proj);
    DecoderState<S> state = decoder_init(latent, dec_p);
    std::vector<TokenId> labels(pair.target);
    labels.push_back(kEosId);
    std::vector<Tensor<S>> logit_rows;
    logit_rows.reserve(labels.size());
    for (std::size_t t = 0; t < labels.size(); ++t) {
        state.prev_token = t == 0 ? kSosId : pair.target[t - 1];
        DecodeStepResult<S> r = decode_step_projected(state, proj, dec_p, drop);
        logit_rows.push_back(r.logits);
        state = r.state;
    }
    Tensor<S> log_probs = log_softmax(stack_rows(logit_rows));
    return nll_loss(log_probs, std::span<const TokenId>(labels), class_weights);
}

template <typename S>
double corpus_loss(const Corpus& corpus, const EncoderParams<S>& enc_p,
                   const EnhancerParams<S>& enh_p, const DecoderParams<S>& dec_p,
                   std::span<const S> class_weights) {
    double total = 0.0;
    for (const auto& pair : corpus.pairs)
        total += static_cast<double>(pair_loss(pair, enc_p, enh_p, dec_p, class_weights).value());
    return total / static_cast<double>(corpus.pairs.size());
}

struct Phase1Stats {
    std::vector<double> batch_losses;   // running batch averages, in order
    std::vector<double> valid_losses;   // one per completed epoch
    std::size_t epochs_run = 0;
    bool stopped_early = false;
};

template <typename S>
struct Phase1Result {
    Model<S> model;
    Phase1Stats stats;
};

// Phase 1. Trains R + T + Q0 jointly with the padding-masked NLL loss and
// teacher forcing, early-stopping when validation loss rises for
// `early_stop_patience` consecutive epochs. On return the encoder and
// enhancer are frozen and the dummy decoder is discarded.
template <typename S>
Phase1Result<S> train_phase1(const PipelineConfig& cfg, const Corpus& train, const Corpus& valid,
                             std::size_t vocab_size) {
    if (train.pairs.empty()) throw ContractError("phase 1: empty training corpus");
    Rng init_rng = Rng(cfg.seed).derive(kStreamInit);
    Model<S> model = init_model<S>(dims_from_config<S>(cfg, vocab_size), init_rng);
    mark_trainable(model);

    std::vector<Tensor<S>> trainable;
    for (auto& g : param_groups(model))
        if (g.name != "classifier")
            for (auto& p : g.params) trainable.push_back(p.tensor);
    Adam<S> opt(trainable, {cfg.learning_rate});

    const std::vector<S> weights = pad_masked_weights<S>(vocab_size);
    Rng phase_rng = Rng(cfg.seed).derive(kStreamPhase1);
    Phase1Result<S> result;
    std::size_t worse_epochs = 0;
    double prev_valid = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train.pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1],
                      order[static_cast<std::size_t>(phase_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const S inv_batch = S(1) / static_cast<S>(end - start);
            opt.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                GradTape<S> tape;
                typename GradTape<S>::Scope scope(tape);
                DropoutCfg drop{cfg.dropout, &phase_rng};
                Tensor<S> loss = mul_scalar(
                    pair_loss(train.pairs[order[i]], model.encoder, model.enhancer,
                              *model.dummy_decoder, std::span<const S>(weights), drop),
                    inv_batch);
                batch_loss += static_cast<double>(loss.value());
                tape.backward(loss);
            }
            if (!std::isfinite(batch_loss))
                throw ContractError("phase 1 diverged: non-finite loss in epoch " +
                                    std::to_string(epoch + 1));
            opt.clip_grad_norm(cfg.grad_clip);
            opt.step();
            result.stats.batch_losses.push_back(batch_loss);
        }
        const double valid_loss = corpus_loss(valid, model.encoder, model.enhancer,
                                              *model.dummy_decoder, std::span<const S>(weights));
        result.stats.valid_losses.push_back(valid_loss);
        result.stats.epochs_run = epoch + 1;
        if (valid_loss > prev_valid) {
            if (++worse_epochs >= cfg.early_stop_patience) {
                result.stats.stopped_early = true;
                break;
            }
        } else {
            worse_epochs = 0;
        }
        prev_valid = valid_loss;
    }

    freeze_encoder_enhancer(model);
    model.dummy_decoder.reset();
    result.model = std::move(model);
    return result;
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

struct RoutedBatch {
    std::vector<std::vector<std::size_t>> clusters;  // pair indices per cluster

    std::size_t total() const {
        std::size_t t = 0;
        for (const auto& c : clusters) t += c.size();
        return t;
    }
};

template <typename S>
Tensor<S> latent_point(const std::vector<TokenId>& source, const Model<S>& m) {
    return enhance(encode<S>(source, m.encoder).final_hidden, m.enhancer);
}

// Latent representations of every pair's source, [M x D], eval mode.
template <typename S>
Tensor<S> latent_points(const Corpus& corpus, const Model<S>& m) {
    const std::size_t d = m.enhancer.latent_dim();
    Tensor<S> out = Tensor<S>::zeros({corpus.pairs.size(), d});
    for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
        Tensor<S> p = latent_point(corpus.pairs[i].source, m);
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = p.at(j);
    }
    return out;
}

// Each pair goes to exactly one cluster by classifier argmax.
template <typename S>
RoutedBatch route_batch(const Corpus& corpus, const Model<S>& m) {
    RoutedBatch routed;
    routed.clusters.resize(m.classifier.n_clusters());
    for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
        const std::size_t c =
            assign_cluster(classify(latent_point(corpus.pairs[i].source, m), m.classifier));
        routed.clusters[c].push_back(i);
    }
    return routed;
}

// ---------------------------------------------------------------------------
// Phase 3: filters
// ---------------------------------------------------------------------------

// Clones one fresh decoder initialization into n filters and trains each
// filter only on its cluster's pairs, with a per-filter RNG stream and Adam
// instance so updates are independent: removing another cluster's data leaves
// a filter's training byte-identical. Empty clusters leave their filters at
// the shared initialization.
template <typename S>
RoutedBatch train_filters(const PipelineConfig& cfg, const Corpus& train, Model<S>& model) {
    if (!model.encoder_frozen || !model.enhancer_frozen)
        throw ContractError("train filters: encoder and enhancer must be frozen (run phase 1)");
    if (train.pairs.empty()) throw ContractError("train filters: empty training corpus");
    if (model.classifier.n_clusters() != cfg.n_filters)
        throw ContractError("train filters: classifier has " +
                            std::to_string(model.classifier.n_clusters()) +
                            " clusters but n_filters is " + std::to_string(cfg.n_filters));

    const std::size_t vocab = model.encoder.embedding.dim(0);
    ModelDims d = dims_from_config<S>(cfg, vocab);
    Rng filter_init_rng = Rng(cfg.seed).derive(kStreamFilterInit);
    DecoderParams<S> base = init_decoder<S>(d, filter_init_rng);

    model.filters.clear();
    for (std::size_t j = 0; j < cfg.n_filters; ++j) model.filters.push_back(clone(base));
    mark_trainable(model);

    RoutedBatch routed = route_batch(train, model);
    const std::vector<S> weights = pad_masked_weights<S>(vocab);

    for (std::size_t j = 0; j < model.filters.size(); ++j) {
        const auto& members = routed.clusters[j];
        if (members.empty()) continue;  // untouched by contract
        DecoderParams<S>& filter = model.filters[j];
        std::vector<Tensor<S>> params;
        for (auto& p : detail::decoder_params(filter)) params.push_back(p.tensor);
        Adam<S> opt(params, {cfg.learning_rate});
        Rng stream = Rng(cfg.seed).derive(kStreamFilterBase + j);

        std::vector<std::size_t> order(members);
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1],
                          order[static_cast<std::size_t>(stream.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), start + cfg.batch_size);
                const S inv_batch = S(1) / static_cast<S>(end - start);
                opt.zero_grad();
                double batch_loss = 0.0;
                for (std::size_t i = start; i < end; ++i) {
                    GradTape<S> tape;
                    typename GradTape<S>::Scope scope(tape);
                    DropoutCfg drop{cfg.dropout, &stream};
                    Tensor<S> loss = mul_scalar(
                        pair_loss(train.pairs[order[i]], model.encoder, model.enhancer, filter,
                                  std::span<const S>(weights), drop),
                        inv_batch);
                    batch_loss += static_cast<double>(loss.value());
                    tape.backward(loss);
                }
                if (!std::isfinite(batch_loss))
                    throw ContractError("filter " + std::to_string(j + 1) +
                                        " diverged: non-finite loss");
                opt.clip_grad_norm(cfg.grad_clip);
                opt.step();
            }
        }
    }
    return routed;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Per pair: encode, enhance, classify, then greedy-decode with the assigned
// filter. Token accuracy is the teacher-forced per-position match over the
// reference tokens; exact match and BLEU-4 use the greedy output.
template <typename S>
EvalReport evaluate_model(const Model<S>& model, const Corpus& corpus, std::size_t max_len) {
    if (corpus.pairs.empty()) throw ContractError("evaluate: empty corpus split");
    if (model.filters.empty())
        throw ContractError("evaluate: model has no filters (run train-filters)");

    EvalReport report;
    report.pairs = corpus.pairs.size();
    report.cluster_counts.assign(model.classifier.n_clusters(), 0);

    TokenAccuracy token_acc;
    BleuAccumulator bleu;
    std::size_t exact = 0;
    std::vector<std::size_t> assignments(corpus.pairs.size());
    Tensor<S> latents = Tensor<S>::zeros({corpus.pairs.size(), model.enhancer.latent_dim()});

    for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
        const SentencePair& pair = corpus.pairs[i];
        EncoderOutput<S> enc = encode<S>(pair.source, model.encoder);
        Tensor<S> latent = enhance(enc.final_hidden, model.enhancer);
        for (std::size_t j = 0; j < latent.dim(0); ++j) latents.at(i, j) = latent.at(j);
        const std::size_t c = assign_cluster(classify(latent, model.classifier));
        assignments[i] = c;
        ++report.cluster_counts[c];
        if (c >= model.filters.size())
            throw ContractError("evaluate: cluster " + std::to_string(c) +
                                " has no corresponding filter");
        const DecoderParams<S>& filter = model.filters[c];

        // Teacher-forced pass over the reference positions.
        Tensor<S> proj = project_steps(enc, filter.attn_proj);
        DecoderState<S> state = decoder_init(latent, filter);
        std::vector<TokenId> forced;
        forced.reserve(pair.target.size());
        for (std::size_t t = 0; t < pair.target.size(); ++t) {
            state.prev_token = t == 0 ? kSosId : pair.target[t - 1];
            DecodeStepResult<S> r = decode_step_projected(state, proj, filter);
            std::size_t best = 0;
            for (std::size_t v = 1; v < r.logits.dim(0); ++v)
                if (r.logits.data()[v] > r.logits.data()[best]) best = v;
            forced.push_back(static_cast<TokenId>(best));
            state = r.state;
        }
        token_acc.add(forced, pair.target);

        const std::vector<TokenId> hyp = greedy_decode(latent, enc, filter, max_len);
        if (hyp == pair.target) ++exact;
        bleu.add(hyp, pair.target);
    }

    report.token_accuracy = token_acc.value();
    report.exact_match = static_cast<double>(exact) / static_cast<double>(corpus.pairs.size());
    report.bleu4 = bleu.value();

    if (corpus.pairs.size() >= 2) {
        try {
            LatentBatch<S> batch{latents, assignments, model.classifier.n_clusters()};
            report.silhouette = silhouette_score(batch).mean;
        } catch (const SingleClusterError&) {
            report.silhouette = -1.0;
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline void write_metrics(const std::string& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("metrics: cannot write " + path);
    out << report.to_text();
}

// One row per latent point: 2-D projection, assigned cluster, s(i).
template <typename S>
void write_cluster_report(const std::string& path, const Tensor<S>& points,
                          const std::vector<std::size_t>& assignments, std::size_t n_clusters) {
    const std::size_t m = points.dim(0);
    Tensor<double> as_double = Tensor<double>::zeros({m, points.dim(1)});
    for (std::size_t i = 0; i < points.numel(); ++i)
        as_double.data()[i] = static_cast<double>(points.data()[i]);
    Pca2dResult pca = pca_project_2d(as_double);

    std::vector<double> s_values(m, 0.0);
    double s_c = -1.0;
    try {
        SilhouetteReport sil =
            silhouette_from_distances(pairwise_distances(points), m, assignments, n_clusters);
        s_values = sil.s;
        s_c = sil.mean;
    } catch (const SingleClusterError&) {
        // single cluster: s(i) reported as 0, mean as -1
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cluster report: cannot write " + path);
    out.precision(17);
    out << "# s_c\t" << s_c << '\n';
    if (pca.degenerate) out << "# warning\trank_deficient\n";
    out << "x\ty\tcluster\ts\n";
    for (std::size_t i = 0; i < m; ++i)
        out << pca.projection.at(i, 0) << '\t' << pca.projection.at(i, 1) << '\t' << assignments[i]
            << '\t' << s_values[i] << '\n';
}

}  // namespace lms2s
