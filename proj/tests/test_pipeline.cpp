#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "lms2s/checkpoint.hpp"
#include "lms2s/pipeline.hpp"

namespace fs = std::filesystem;
using lms2s::Corpus;
using lms2s::PipelineConfig;
using lms2s::Rng;
using lms2s::SentencePair;
using lms2s::Tensor;
using lms2s::TokenId;

namespace {

PipelineConfig tiny_config(std::uint64_t seed) {
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.hidden_dim = 16;
    cfg.latent_dim = 16;
    cfg.embed_dim = 8;
    cfg.dropout = 0.0;
    cfg.learning_rate = 0.01;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.n_filters = 2;
    cfg.max_len = 12;
    return cfg;
}

// Copy-task corpus over a tiny vocabulary: target equals source.
Corpus copy_corpus(std::size_t pairs, std::size_t vocab, Rng& rng, std::size_t len = 4) {
    Corpus c;
    c.split = "train";
    for (std::size_t i = 0; i < pairs; ++i) {
        SentencePair p;
        for (std::size_t t = 0; t < len; ++t)
            p.source.push_back(static_cast<TokenId>(rng.uniform_int(4, static_cast<std::int64_t>(vocab) - 1)));
        p.target = p.source;
        c.pairs.push_back(p);
    }
    return c;
}

std::vector<double> group_bytes(lms2s::Model<double>& m, const std::string& name) {
    std::vector<double> out;
    for (auto& g : lms2s::param_groups(m))
        if (g.name == name)
            for (auto& p : g.params)
                out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

}  // namespace

TEST(Phase1Training, LossDecreasesOnCopyTask) {
    PipelineConfig cfg = tiny_config(3);
    Rng rng(17);
    Corpus train = copy_corpus(10, 10, rng);
    Corpus valid = copy_corpus(3, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    ASSERT_GE(result.stats.batch_losses.size(), 2u);
    EXPECT_LT(result.stats.batch_losses.back(), result.stats.batch_losses.front());
}

TEST(Phase1Training, FreezesEncoderEnhancerAndDropsDummy) {
    PipelineConfig cfg = tiny_config(4);
    Rng rng(18);
    Corpus train = copy_corpus(6, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    EXPECT_TRUE(result.model.encoder_frozen);
    EXPECT_TRUE(result.model.enhancer_frozen);
    EXPECT_FALSE(result.model.dummy_decoder.has_value());
    for (auto& g : lms2s::param_groups(result.model))
        if (g.frozen)
            for (auto& p : g.params) EXPECT_FALSE(p.tensor.requires_grad());
}

TEST(Phase1Training, DeterministicForFixedSeed) {
    auto run = [] {
        PipelineConfig cfg = tiny_config(5);
        Rng rng(19);
        Corpus train = copy_corpus(6, 10, rng);
        Corpus valid = copy_corpus(2, 10, rng);
        auto r = lms2s::train_phase1<double>(cfg, train, valid, 10);
        return group_bytes(r.model, "encoder");
    };
    EXPECT_EQ(run(), run());
}

TEST(Phase1Training, NanLossAborts) {
    PipelineConfig cfg = tiny_config(6);
    // a step this size overflows the attention scores to inf, and the
    // max-subtracted softmax then yields inf - inf
    cfg.learning_rate = 1e160;
    cfg.epochs = 4;
    Rng rng(20);
    Corpus train = copy_corpus(8, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    EXPECT_THROW(lms2s::train_phase1<double>(cfg, train, valid, 10), lms2s::ContractError);
}

TEST(RouteBatch, SingleFilterRoutesEverythingToCluster0) {
    PipelineConfig cfg = tiny_config(7);
    cfg.n_filters = 1;
    Rng rng(21);
    Corpus train = copy_corpus(5, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    auto routed = lms2s::route_batch(train, result.model);
    ASSERT_EQ(routed.clusters.size(), 1u);
    EXPECT_EQ(routed.clusters[0].size(), train.pairs.size());
}

TEST(RouteBatch, PartitionCoversEveryPairExactlyOnce) {
    PipelineConfig cfg = tiny_config(8);
    cfg.n_filters = 3;
    Rng rng(22);
    Corpus train = copy_corpus(20, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    auto routed = lms2s::route_batch(train, result.model);
    std::vector<int> seen(train.pairs.size(), 0);
    for (const auto& cluster : routed.clusters)
        for (std::size_t idx : cluster) ++seen[idx];
    for (int v : seen) EXPECT_EQ(v, 1);
    EXPECT_EQ(routed.total(), train.pairs.size());
}

TEST(RouteBatch, StableUnderFrozenParameters) {
    PipelineConfig cfg = tiny_config(9);
    Rng rng(23);
    Corpus train = copy_corpus(8, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    auto a = lms2s::route_batch(train, result.model);
    auto b = lms2s::route_batch(train, result.model);
    EXPECT_EQ(a.clusters, b.clusters);
}

TEST(FiltersTraining, RequiresFrozenEncoder) {
    PipelineConfig cfg = tiny_config(10);
    Rng rng(24);
    lms2s::ModelDims d;
    d.vocab = 10;
    d.embed = cfg.embed_dim;
    d.hidden = cfg.hidden_dim;
    d.latent = cfg.latent_dim;
    Rng init(1);
    lms2s::Model<double> model = lms2s::init_model<double>(d, init);  // not frozen
    Corpus train = copy_corpus(4, 10, rng);
    EXPECT_THROW(lms2s::train_filters(cfg, train, model), lms2s::ContractError);
}

TEST(FiltersTraining, EmptyClusterFilterStaysAtSharedInitialization) {
    PipelineConfig cfg = tiny_config(11);
    cfg.n_filters = 2;
    cfg.epochs = 2;
    Rng rng(25);
    Corpus train = copy_corpus(6, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    lms2s::Model<double>& model = result.model;
    // collapse the classifier so every pair routes to cluster 0
    model.classifier.w2 = Tensor<double>::zeros({2, cfg.latent_dim});
    model.classifier.b2 = Tensor<double>::from_vector({100.0, -100.0}, {2});
    auto routed = lms2s::train_filters(cfg, train, model);
    ASSERT_EQ(routed.clusters[0].size(), train.pairs.size());
    ASSERT_TRUE(routed.clusters[1].empty());

    // untouched filter equals the shared initialization drawn from the
    // filter-init stream, byte for byte
    lms2s::ModelDims d = lms2s::dims_from_config<double>(cfg, 10);
    Rng init_stream = Rng(cfg.seed).derive(lms2s::kStreamFilterInit);
    lms2s::DecoderParams<double> expected = lms2s::init_decoder<double>(d, init_stream);
    for (std::size_t i = 0; i < expected.w_out.numel(); ++i)
        EXPECT_EQ(model.filters[1].w_out.data()[i], expected.w_out.data()[i]);
    // and the trained filter moved away from it
    bool moved = false;
    for (std::size_t i = 0; i < expected.w_out.numel(); ++i)
        moved = moved || model.filters[0].w_out.data()[i] != expected.w_out.data()[i];
    EXPECT_TRUE(moved);
}

TEST(FiltersTraining, RemovingOtherClustersDataLeavesFilterBitExact) {
    PipelineConfig cfg = tiny_config(12);
    cfg.n_filters = 2;
    cfg.epochs = 2;
    Rng rng(26);
    Corpus train = copy_corpus(16, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    auto phase1 = lms2s::train_phase1<double>(cfg, train, valid, 10);

    // split the routing at the median of the first latent coordinate so both
    // clusters are guaranteed non-empty
    {
        Tensor<double> latents = lms2s::latent_points(train, phase1.model);
        std::vector<double> first;
        for (std::size_t i = 0; i < latents.dim(0); ++i) first.push_back(latents.at(i, 0));
        std::vector<double> sorted = first;
        std::sort(sorted.begin(), sorted.end());
        const double median = 0.5 * (sorted[7] + sorted[8]);
        phase1.model.classifier.w1 = Tensor<double>::zeros({cfg.latent_dim, cfg.latent_dim});
        for (std::size_t i = 0; i < cfg.latent_dim; ++i) phase1.model.classifier.w1.at(i, i) = 1.0;
        phase1.model.classifier.b1 = Tensor<double>::full({cfg.latent_dim}, 100.0);  // keep ReLU linear
        phase1.model.classifier.w2 = Tensor<double>::zeros({2, cfg.latent_dim});
        phase1.model.classifier.w2.at(0, 0) = 1.0;
        phase1.model.classifier.w2.at(1, 0) = -1.0;
        phase1.model.classifier.b2 =
            Tensor<double>::from_vector({-(median + 100.0), median + 100.0}, {2});
    }

    lms2s::Model<double> full = phase1.model;
    auto routed = lms2s::train_filters(cfg, train, full);
    ASSERT_FALSE(routed.clusters[0].empty());
    ASSERT_FALSE(routed.clusters[1].empty());

    // corpus with cluster-1 pairs removed, in original order
    Corpus reduced;
    reduced.split = train.split;
    for (std::size_t idx : routed.clusters[0]) reduced.pairs.push_back(train.pairs[idx]);
    lms2s::Model<double> partial = phase1.model;
    lms2s::train_filters(cfg, reduced, partial);

    ASSERT_EQ(full.filters.size(), partial.filters.size());
    const auto& a = full.filters[0];
    const auto& b = partial.filters[0];
    for (std::size_t i = 0; i < a.w_out.numel(); ++i)
        ASSERT_EQ(a.w_out.data()[i], b.w_out.data()[i]);
    for (std::size_t i = 0; i < a.cell.w_ih.numel(); ++i)
        ASSERT_EQ(a.cell.w_ih.data()[i], b.cell.w_ih.data()[i]);
}

TEST(EvaluateModel, MemorizedCopyTaskScoresPerfect) {
    PipelineConfig cfg = tiny_config(13);
    cfg.n_filters = 1;
    cfg.epochs = 60;
    cfg.learning_rate = 0.02;
    Rng rng(27);
    Corpus train = copy_corpus(3, 7, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, train, 7);
    lms2s::train_filters(cfg, train, result.model);
    lms2s::EvalReport report = lms2s::evaluate_model(result.model, train, cfg.max_len);
    EXPECT_DOUBLE_EQ(report.token_accuracy, 1.0);
    EXPECT_DOUBLE_EQ(report.exact_match, 1.0);
    EXPECT_DOUBLE_EQ(report.bleu4, 1.0);
    EXPECT_EQ(report.pairs, 3u);
}

TEST(EvaluateModel, EmptySplitThrows) {
    PipelineConfig cfg = tiny_config(14);
    Rng rng(28);
    Corpus train = copy_corpus(4, 10, rng);
    Corpus valid = copy_corpus(2, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    lms2s::train_filters(cfg, train, result.model);
    Corpus empty;
    EXPECT_THROW(lms2s::evaluate_model(result.model, empty, cfg.max_len), lms2s::ContractError);
}

TEST(EvaluateModel, CheckpointRoundTripReproducesReportExactly) {
    PipelineConfig cfg = tiny_config(15);
    cfg.epochs = 2;
    Rng rng(29);
    Corpus train = copy_corpus(8, 10, rng);
    Corpus valid = copy_corpus(3, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    lms2s::train_filters(cfg, train, result.model);
    lms2s::EvalReport before = lms2s::evaluate_model(result.model, valid, cfg.max_len);

    const auto path = (fs::temp_directory_path() / "lms2s_roundtrip.lms2s").string();
    lms2s::save_checkpoint(lms2s::checkpoint_from_model(result.model, lms2s::config_echo(cfg)),
                           path);
    lms2s::Model<double> restored = lms2s::model_from_checkpoint<double>(lms2s::load_checkpoint(path));
    fs::remove(path);
    lms2s::EvalReport after = lms2s::evaluate_model(restored, valid, cfg.max_len);
    EXPECT_EQ(before.to_text(), after.to_text());
}

// Copy task at these sizes trains in well under a second per epoch; the
// multi-filter-vs-baseline comparison at corpus scale lives in the
// acceptance suite.
TEST(EvaluateModel, ClusterCountsSumToPairs) {
    PipelineConfig cfg = tiny_config(16);
    cfg.n_filters = 3;
    cfg.epochs = 2;
    Rng rng(30);
    Corpus train = copy_corpus(12, 10, rng);
    Corpus valid = copy_corpus(5, 10, rng);
    auto result = lms2s::train_phase1<double>(cfg, train, valid, 10);
    lms2s::train_filters(cfg, train, result.model);
    lms2s::EvalReport report = lms2s::evaluate_model(result.model, valid, cfg.max_len);
    std::size_t total = 0;
    for (std::size_t c : report.cluster_counts) total += c;
    EXPECT_EQ(total, valid.pairs.size());
}
