#pragma once

// Implementation of the CLI commands: file layout conventions, checkpoint
// dimension guard, and the per-phase drivers shared by the sub-commands and
// the end-to-end `pipeline` command.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lms2s/checkpoint.hpp"
#include "lms2s/cluster_env.hpp"
#include "lms2s/common.hpp"
#include "lms2s/config.hpp"
#include "lms2s/data.hpp"
#include "lms2s/pipeline.hpp"
#include "lms2s/sac.hpp"

namespace lms2s::detail {

namespace fs = std::filesystem;

inline std::string ckpt_path(const PipelineConfig& cfg, int phase) {
    return cfg.out_dir + "/checkpoint_phase" + std::to_string(phase) + ".lms2s";
}

inline std::string vocab_path(const PipelineConfig& cfg) { return cfg.out_dir + "/vocab.txt"; }

inline std::string train_path(const PipelineConfig& cfg) {
    return cfg.train_file.empty() ? cfg.out_dir + "/synth.train.tsv" : cfg.train_file;
}

inline std::string valid_path(const PipelineConfig& cfg) {
    return cfg.valid_file.empty() ? cfg.out_dir + "/synth.valid.tsv" : cfg.valid_file;
}

template <typename F>
void with_precision(const PipelineConfig& cfg, F&& f) {
    if (cfg.precision == Precision::F32)
        f(float{});
    else
        f(double{});
}

// Refuses a checkpoint whose recorded model dimensions differ from the
// effective config; training state cannot be resumed across dimension edits.
inline void guard_dimensions(const Checkpoint& ckpt, const PipelineConfig& cfg) {
    PipelineConfig stored = config_from_echo(ckpt.config_echo);
    std::string report;
    auto check = [&](const std::string& key, const std::string& was, const std::string& now) {
        if (was != now) report += "  " + key + ": checkpoint=" + was + " config=" + now + "\n";
    };
    check("hidden_dim", std::to_string(stored.hidden_dim), std::to_string(cfg.hidden_dim));
    check("latent_dim", std::to_string(stored.latent_dim), std::to_string(cfg.latent_dim));
    check("embed_dim", std::to_string(stored.embed_dim), std::to_string(cfg.embed_dim));
    check("n_filters", std::to_string(stored.n_filters), std::to_string(cfg.n_filters));
    check("bidirectional", stored.bidirectional ? "true" : "false",
          cfg.bidirectional ? "true" : "false");
    check("precision", stored.precision == Precision::F32 ? "f32" : "f64",
          cfg.precision == Precision::F32 ? "f32" : "f64");
    if (!report.empty())
        throw ConfigError("checkpoint dimensions disagree with the configuration:\n" + report +
                          "rerun from `train` or align the configuration");
}

inline Checkpoint load_phase_checkpoint(const PipelineConfig& cfg, int phase,
                                        const char* needed_command) {
    const std::string path = ckpt_path(cfg, phase);
    if (!fs::exists(path))
        throw IoError("missing " + path + "; run `" + needed_command + "` first");
    Checkpoint ckpt = load_checkpoint(path);
    guard_dimensions(ckpt, cfg);
    return ckpt;
}

inline void cmd_gen_data(const PipelineConfig& cfg, std::ostream& out,
                         bool only_if_missing = false) {
    const std::string train_file = train_path(cfg);
    const std::string valid_file = valid_path(cfg);
    if (only_if_missing && fs::exists(train_file) && fs::exists(valid_file)) {
        out << "corpus: using existing " << train_file << " and " << valid_file << '\n';
        return;
    }
    fs::create_directories(cfg.out_dir);
    SynthConfig synth;
    synth.seed = Rng(cfg.seed).derive(kStreamGen).next_u64();
    synth.n_pairs = cfg.gen_pairs;
    synth.mix = cfg.gen_mix;
    synth.alphabet = static_cast<int>(cfg.gen_alphabet);
    synth.min_len = static_cast<int>(cfg.gen_min_len);
    synth.max_len = static_cast<int>(cfg.gen_max_len);
    synth.tilt = cfg.gen_tilt;
    synth.len_tilt = cfg.gen_len_tilt;
    const auto pairs = generate_synthetic_heterogeneous(synth);
    const std::size_t valid_count = static_cast<std::size_t>(
        std::llround(cfg.gen_valid_fraction * static_cast<double>(pairs.size())));
    const std::size_t train_count = pairs.size() - valid_count;
    write_corpus(train_file, pairs, 0, train_count);
    write_corpus(valid_file, pairs, train_count, pairs.size());
    out << "corpus: wrote " << train_count << " train pairs to " << train_file << " and "
        << valid_count << " valid pairs to " << valid_file << '\n';
}

struct LoadedSplits {
    Corpus train;
    Corpus valid;
    Vocabulary vocab;
};

inline LoadedSplits load_splits_build(const PipelineConfig& cfg) {
    LoadedSplits s;
    LoadedCorpus train = load_parallel_corpus(train_path(cfg), VocabPolicy::Build, nullptr,
                                              cfg.max_len, "train");
    LoadedCorpus valid = load_parallel_corpus(valid_path(cfg), VocabPolicy::Apply, &train.vocab,
                                              cfg.max_len, "valid");
    s.train = std::move(train.corpus);
    s.valid = std::move(valid.corpus);
    s.vocab = std::move(train.vocab);
    return s;
}

inline LoadedSplits load_splits_apply(const PipelineConfig& cfg) {
    LoadedSplits s;
    s.vocab = Vocabulary::load(vocab_path(cfg));
    s.train = load_parallel_corpus(train_path(cfg), VocabPolicy::Apply, &s.vocab, cfg.max_len,
                                   "train")
                  .corpus;
    s.valid = load_parallel_corpus(valid_path(cfg), VocabPolicy::Apply, &s.vocab, cfg.max_len,
                                   "valid")
                  .corpus;
    return s;
}

template <typename S>
void cmd_train(const PipelineConfig& cfg, std::ostream& out) {
    fs::create_directories(cfg.out_dir);
    LoadedSplits splits = load_splits_build(cfg);
    splits.vocab.save(vocab_path(cfg));
    Phase1Result<S> r = train_phase1<S>(cfg, splits.train, splits.valid, splits.vocab.size());
    save_checkpoint(checkpoint_from_model(r.model, config_echo(cfg)), ckpt_path(cfg, 1));
    out << "phase 1: " << r.stats.epochs_run << " epochs"
        << (r.stats.stopped_early ? " (early stop)" : "") << ", final validation loss "
        << (r.stats.valid_losses.empty() ? 0.0 : r.stats.valid_losses.back()) << ", wrote "
        << ckpt_path(cfg, 1) << '\n';
}

// Frozen latent sample for the RL phase: every train pair's latent point,
// subsampled to at most sac_silhouette_sample rows with a fixed seeded draw.
template <typename S>
Tensor<S> rl_latent_sample(const PipelineConfig& cfg, const Corpus& train, const Model<S>& model) {
    Tensor<S> all = latent_points(train, model);
    const std::size_t m = all.dim(0);
    if (m <= cfg.sac.silhouette_sample) return all;
    Rng rng = Rng(cfg.seed).derive(kStreamLatentSample);
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    for (std::size_t i = m; i > 1; --i)
        std::swap(order[i - 1],
                  order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    order.resize(cfg.sac.silhouette_sample);
    Tensor<S> sample = Tensor<S>::zeros({order.size(), all.dim(1)});
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = 0; j < all.dim(1); ++j) sample.at(i, j) = all.at(order[i], j);
    return sample;
}

template <typename S>
void cmd_enhance(const PipelineConfig& cfg, std::ostream& out) {
    Checkpoint ckpt = load_phase_checkpoint(cfg, 1, "train");
    Model<S> model = model_from_checkpoint<S>(ckpt);
    LoadedSplits splits = load_splits_apply(cfg);

    EnvConfig env_cfg{cfg.sac.k, cfg.sac.b, cfg.sac.target, cfg.sac.horizon};
    Tensor<S> sample = rl_latent_sample(cfg, splits.train, model);
    model.classifier = screen_classifier_init(model.classifier, sample, cfg.sac.init_candidates,
                                              Rng(cfg.seed).derive(kStreamSac + 1));
    ClusterEnv<S> env(sample, clone(model.classifier), env_cfg);
    SacHyper hyper;
    hyper.obs_dim = env.obs_dim();
    hyper.act_dim = kClassifierGroups;
    hyper.hidden = cfg.sac.hidden;
    hyper.lr = cfg.sac.lr;
    hyper.batch = cfg.sac.batch;
    hyper.buffer = cfg.sac.buffer;
    hyper.gamma = cfg.sac.gamma;
    hyper.tau = cfg.sac.tau;
    hyper.seed = Rng(cfg.seed).derive(kStreamSac).next_u64();
    SacAgent agent(hyper);

    EnhanceResult<S> result = enhance_classifier(env, agent, cfg.sac.max_steps, cfg.sac.warmup);
    model.classifier = result.best_params;
    write_trajectory(cfg.out_dir + "/rl_trajectory.tsv", result.log);
    save_checkpoint(checkpoint_from_model(model, config_echo(cfg)), ckpt_path(cfg, 2));
    out << "phase 2: best silhouette " << result.best_s_c
        << (result.reached_target ? " (target reached)" : " (target not reached)") << " in "
        << result.log.size() << " steps, wrote " << ckpt_path(cfg, 2) << '\n';
}

template <typename S>
void cmd_train_filters(const PipelineConfig& cfg, std::ostream& out) {
    if (!fs::exists(ckpt_path(cfg, 2)) && fs::exists(ckpt_path(cfg, 1)))
        throw IoError("missing " + ckpt_path(cfg, 2) + "; run `enhance` first");
    Checkpoint ckpt = load_phase_checkpoint(cfg, 2, "train");
    Model<S> model = model_from_checkpoint<S>(ckpt);
    LoadedSplits splits = load_splits_apply(cfg);
    RoutedBatch routed = train_filters(cfg, splits.train, model);
    save_checkpoint(checkpoint_from_model(model, config_echo(cfg)), ckpt_path(cfg, 3));
    out << "phase 3: cluster sizes";
    for (const auto& c : routed.clusters) out << ' ' << c.size();
    out << ", wrote " << ckpt_path(cfg, 3) << '\n';
}

template <typename S>
void cmd_evaluate(const PipelineConfig& cfg, std::ostream& out) {
    if (!fs::exists(ckpt_path(cfg, 3))) {
        if (fs::exists(ckpt_path(cfg, 2)))
            throw IoError("missing " + ckpt_path(cfg, 3) + "; run `train-filters` first");
        if (fs::exists(ckpt_path(cfg, 1)))
            throw IoError("missing " + ckpt_path(cfg, 3) + "; run `enhance` first");
        throw IoError("missing " + ckpt_path(cfg, 3) + "; run `train` first");
    }
    Checkpoint ckpt = load_phase_checkpoint(cfg, 3, "train");
    Model<S> model = model_from_checkpoint<S>(ckpt);
    LoadedSplits splits = load_splits_apply(cfg);
    EvalReport report = evaluate_model(model, splits.valid, cfg.max_len);
    write_metrics(cfg.out_dir + "/metrics.txt", report);
    out << report.to_text();
}

template <typename S>
void cmd_cluster_report(const PipelineConfig& cfg, std::ostream& out) {
    int phase = 0;
    for (int p : {3, 2, 1})
        if (fs::exists(ckpt_path(cfg, p))) {
            phase = p;
            break;
        }
    if (phase == 0) throw IoError("no checkpoint in " + cfg.out_dir + "; run `train` first");
    Checkpoint ckpt = load_phase_checkpoint(cfg, phase, "train");
    Model<S> model = model_from_checkpoint<S>(ckpt);
    LoadedSplits splits = load_splits_apply(cfg);
    Tensor<S> latents = latent_points(splits.train, model);
    std::vector<std::size_t> assignments(latents.dim(0));
    for (std::size_t i = 0; i < latents.dim(0); ++i) {
        Tensor<S> point = Tensor<S>::zeros({latents.dim(1)});
        for (std::size_t j = 0; j < latents.dim(1); ++j) point.data()[j] = latents.at(i, j);
        assignments[i] = assign_cluster(classify(point, model.classifier));
    }
    write_cluster_report(cfg.out_dir + "/cluster_report.tsv", latents, assignments,
                         model.classifier.n_clusters());
    out << "cluster report: wrote " << cfg.out_dir + "/cluster_report.tsv" << " from phase "
        << phase << " checkpoint\n";
}

}  // namespace lms2s::detail
