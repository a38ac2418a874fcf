#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lms2s/adam.hpp"
#include "lms2s/grad_check.hpp"
#include "lms2s/seq2seq.hpp"
#include "oracles.hpp"

using lms2s::DecoderParams;
using lms2s::EncoderOutput;
using lms2s::EncoderParams;
using lms2s::GradTape;
using lms2s::LstmParams;
using lms2s::LstmState;
using lms2s::ModelDims;
using lms2s::Rng;
using lms2s::Tensor;
using lms2s::TokenId;

namespace {

ModelDims tiny_dims(std::size_t vocab = 9, std::size_t n_clusters = 3) {
    ModelDims d;
    d.vocab = vocab;
    d.embed = 4;
    d.hidden = 5;
    d.latent = 5;
    d.n_clusters = n_clusters;
    d.bidirectional = true;
    return d;
}

std::vector<double> to_vec(const Tensor<double>& t) {
    return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST(LstmCell, ZeroParametersZeroState) {
    LstmParams<double> p{Tensor<double>::zeros({20, 4}), Tensor<double>::zeros({20, 5}),
                         Tensor<double>::zeros({20})};
    Tensor<double> x = Tensor<double>::from_vector({1.0, -2.0, 0.5, 3.0}, {4});
    LstmState<double> out = lms2s::lstm_cell_step(x, lms2s::lstm_zero_state<double>(5), p);
    for (double v : out.h.data()) EXPECT_EQ(v, 0.0);
    for (double v : out.c.data()) EXPECT_EQ(v, 0.0);
}

TEST(LstmCell, MatchesScalarLoopOracle) {
    Rng rng(101);
    ModelDims d = tiny_dims();
    LstmParams<double> p = lms2s::init_lstm<double>(d.hidden, d.embed, rng);
    Tensor<double> x = lms2s::uniform_tensor<double>({d.embed}, -1, 1, rng);
    LstmState<double> st{lms2s::uniform_tensor<double>({d.hidden}, -1, 1, rng),
                         lms2s::uniform_tensor<double>({d.hidden}, -1, 1, rng)};
    LstmState<double> out = lms2s::lstm_cell_step(x, st, p);
    const auto expect = oracles::lstm_cell(to_vec(p.w_ih), to_vec(p.w_hh), to_vec(p.bias),
                                           to_vec(x), to_vec(st.h), to_vec(st.c), d.hidden,
                                           d.embed);
    for (std::size_t i = 0; i < d.hidden; ++i) {
        EXPECT_NEAR(out.h.data()[i], expect.h[i], 1e-12);
        EXPECT_NEAR(out.c.data()[i], expect.c[i], 1e-12);
    }
}

TEST(LstmCell, GradCheckPasses) {
    Rng rng(103);
    ModelDims d = tiny_dims();
    LstmParams<double> p = lms2s::init_lstm<double>(d.hidden, d.embed, rng);
    Tensor<double> x = lms2s::uniform_tensor<double>({d.embed}, -1, 1, rng);
    LstmState<double> st{lms2s::uniform_tensor<double>({d.hidden}, -1, 1, rng),
                         lms2s::uniform_tensor<double>({d.hidden}, -1, 1, rng)};
    for (auto* t : {&p.w_ih, &p.w_hh, &p.bias}) t->set_requires_grad(true);
    auto f = [&] { return lms2s::sum(lms2s::lstm_cell_step(x, st, p).h); };
    auto report = lms2s::grad_check(f, {{"lstm", {p.w_ih, p.w_hh, p.bias}}}, 1e-6, 1e-4);
    EXPECT_TRUE(report.ok) << report.worst;
}

TEST(EncodeOp, LengthOneSequence) {
    Rng rng(200);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    std::vector<TokenId> tokens{4};
    EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
    ASSERT_EQ(enc.step_outputs.dim(0), 1u);
    for (std::size_t j = 0; j < enc.final_hidden.dim(0); ++j)
        EXPECT_EQ(enc.step_outputs.at(0, j), enc.final_hidden.data()[j]);
}

TEST(EncodeOp, ReversedInputSwapsDirectionRoles) {
    Rng rng(201);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    m.encoder.bwd = lms2s::clone(m.encoder.fwd);  // identical direction params
    std::vector<TokenId> tokens{4, 7, 5, 8, 6};
    std::vector<TokenId> reversed(tokens.rbegin(), tokens.rend());
    EncoderOutput<double> fwd = lms2s::encode<double>(tokens, m.encoder);
    EncoderOutput<double> rev = lms2s::encode<double>(reversed, m.encoder);
    const std::size_t h = d.hidden;
    for (std::size_t j = 0; j < h; ++j) {
        // forward half of one run equals backward half of the other, exactly
        EXPECT_EQ(fwd.final_hidden.data()[j], rev.final_hidden.data()[h + j]);
        EXPECT_EQ(fwd.final_hidden.data()[h + j], rev.final_hidden.data()[j]);
    }
}

TEST(EncodeOp, DeterministicAcrossRuns) {
    std::vector<TokenId> tokens{1, 2, 3};
    auto run = [&] {
        Rng rng(202);
        lms2s::Model<double> m = lms2s::init_model<double>(tiny_dims(), rng);
        return lms2s::encode<double>(tokens, m.encoder);
    };
    EncoderOutput<double> a = run();
    EncoderOutput<double> b = run();
    for (std::size_t i = 0; i < a.step_outputs.numel(); ++i)
        EXPECT_EQ(a.step_outputs.data()[i], b.step_outputs.data()[i]);
}

TEST(EncodeOp, EmptySequenceThrows) {
    Rng rng(203);
    lms2s::Model<double> m = lms2s::init_model<double>(tiny_dims(), rng);
    std::vector<TokenId> empty;
    EXPECT_THROW(lms2s::encode<double>(empty, m.encoder), lms2s::ContractError);
}

TEST(EncodeOp, StepOutputRowsMatchInputLength) {
    Rng rng(204);
    lms2s::Model<double> m = lms2s::init_model<double>(tiny_dims(), rng);
    for (std::size_t len : {1u, 3u, 7u}) {
        std::vector<TokenId> tokens(len, 4);
        EXPECT_EQ(lms2s::encode<double>(tokens, m.encoder).step_outputs.dim(0), len);
    }
}

TEST(EnhanceOp, ZeroWeightsGiveZeroOutput) {
    lms2s::EnhancerParams<double> p{Tensor<double>::zeros({5, 10}), Tensor<double>::zeros({5}),
                                    Tensor<double>::zeros({5, 5}), Tensor<double>::zeros({5})};
    Tensor<double> h = Tensor<double>::full({10}, 0.7);
    Tensor<double> out = lms2s::enhance(h, p);
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(EnhanceOp, MatchesHandComposedOracle) {
    Rng rng(300);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    Tensor<double> h = lms2s::uniform_tensor<double>({d.enc_out()}, -1, 1, rng);
    Tensor<double> out = lms2s::enhance(h, m.enhancer);
    for (std::size_t i = 0; i < d.latent; ++i) {
        // hand composition: w2 * tanh(w1 h + b1) + b2 with plain loops
        double expect = m.enhancer.b2.data()[i];
        for (std::size_t k = 0; k < d.latent; ++k) {
            double hid = m.enhancer.b1.data()[k];
            for (std::size_t j = 0; j < d.enc_out(); ++j)
                hid += m.enhancer.w1.at(k, j) * h.data()[j];
            expect += m.enhancer.w2.at(i, k) * std::tanh(hid);
        }
        EXPECT_NEAR(out.data()[i], expect, 1e-12);
    }
}

TEST(EnhanceOp, GradCheckPasses) {
    Rng rng(301);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    Tensor<double> h = lms2s::uniform_tensor<double>({d.enc_out()}, -1, 1, rng);
    auto& e = m.enhancer;
    for (auto* t : {&e.w1, &e.b1, &e.w2, &e.b2}) t->set_requires_grad(true);
    auto f = [&] { return lms2s::sum(lms2s::enhance(h, e)); };
    auto report = lms2s::grad_check(f, {{"enhancer", {e.w1, e.b1, e.w2, e.b2}}}, 1e-6, 1e-4);
    EXPECT_TRUE(report.ok) << report.worst;
}

TEST(ClassifyOp, SingleClusterIsAlwaysCertain) {
    Rng rng(400);
    lms2s::Model<double> m = lms2s::init_model<double>(tiny_dims(9, 1), rng);
    Tensor<double> latent = lms2s::uniform_tensor<double>({5}, -2, 2, rng);
    Tensor<double> probs = lms2s::classify(latent, m.classifier);
    ASSERT_EQ(probs.dim(0), 1u);
    EXPECT_EQ(probs.data()[0], 1.0);
}

TEST(ClassifyOp, ZeroWeightsGiveUniform) {
    lms2s::ClassifierParams<double> p{Tensor<double>::zeros({5, 5}), Tensor<double>::zeros({5}),
                                      Tensor<double>::zeros({3, 5}), Tensor<double>::zeros({3})};
    Tensor<double> latent = Tensor<double>::full({5}, 0.3);
    Tensor<double> probs = lms2s::classify(latent, p);
    for (double v : probs.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(ClassifyOp, ProbabilityVectorProperty) {
    Rng rng(401);
    lms2s::Model<double> m = lms2s::init_model<double>(tiny_dims(9, 4), rng);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor<double> latent = lms2s::uniform_tensor<double>({5}, -5, 5, rng);
        Tensor<double> probs = lms2s::classify(latent, m.classifier);
        double total = 0.0;
        for (double v : probs.data()) {
            EXPECT_GE(v, 0.0);
            total += v;
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(AttendOp, SingleStepGetsFullWeight) {
    Rng rng(500);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    std::vector<TokenId> tokens{3};
    EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
    const auto& dec = *m.dummy_decoder;
    Tensor<double> hidden = lms2s::uniform_tensor<double>({d.hidden}, -1, 1, rng);
    auto att = lms2s::attend(hidden, enc, dec.attn_proj);
    ASSERT_EQ(att.weights.dim(0), 1u);
    EXPECT_NEAR(att.weights.data()[0], 1.0, 1e-15);
    Tensor<double> proj = lms2s::project_steps(enc, dec.attn_proj);
    for (std::size_t j = 0; j < d.hidden; ++j) EXPECT_EQ(att.context.data()[j], proj.at(0, j));
}

TEST(AttendOp, OrthogonalHiddenGivesUniformWeights) {
    Rng rng(501);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    std::vector<TokenId> tokens{3, 4, 5, 6};
    EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
    Tensor<double> hidden = Tensor<double>::zeros({d.hidden});  // orthogonal to everything
    auto att = lms2s::attend(hidden, enc, m.dummy_decoder->attn_proj);
    for (double w : att.weights.data()) EXPECT_NEAR(w, 0.25, 1e-12);
}

TEST(AttendOp, MatchesScoreLoopOracle) {
    Rng rng(502);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    std::vector<TokenId> tokens{2, 7, 8};
    EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
    Tensor<double> hidden = lms2s::uniform_tensor<double>({d.hidden}, -1, 1, rng);
    Tensor<double> proj = lms2s::project_steps(enc, m.dummy_decoder->attn_proj);
    auto att = lms2s::attend(hidden, enc, m.dummy_decoder->attn_proj);
    const auto expect = oracles::attention(to_vec(proj), to_vec(hidden), tokens.size(), d.hidden);
    for (std::size_t t = 0; t < tokens.size(); ++t)
        EXPECT_NEAR(att.weights.data()[t], expect.weights[t], 1e-12);
    for (std::size_t j = 0; j < d.hidden; ++j)
        EXPECT_NEAR(att.context.data()[j], expect.context[j], 1e-12);
}

TEST(DecodeStep, FirstStepUsesLatentAsHiddenAndZeroCell) {
    Rng rng(600);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    Tensor<double> latent = lms2s::uniform_tensor<double>({d.latent}, -1, 1, rng);
    auto state = lms2s::decoder_init(latent, *m.dummy_decoder);
    EXPECT_EQ(state.prev_token, lms2s::kSosId);
    for (std::size_t j = 0; j < d.hidden; ++j) {
        EXPECT_EQ(state.st.h.data()[j], latent.data()[j]);
        EXPECT_EQ(state.st.c.data()[j], 0.0);
    }
}

TEST(DecodeStep, LogitsSpanVocab) {
    Rng rng(601);
    ModelDims d = tiny_dims(11);
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    std::vector<TokenId> tokens{4, 5};
    EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
    Tensor<double> latent = lms2s::enhance(enc.final_hidden, m.enhancer);
    auto r = lms2s::decode_step(lms2s::decoder_init(latent, *m.dummy_decoder), enc,
                                *m.dummy_decoder);
    EXPECT_EQ(r.logits.dim(0), 11u);
}

TEST(DecodeStep, GradCheckThroughFullStep) {
    Rng rng(602);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    auto& dec = *m.dummy_decoder;
    std::vector<TokenId> tokens{4, 5, 6};
    std::vector<Tensor<double>> dec_tensors;
    for (auto& p : lms2s::detail::decoder_params(dec)) {
        p.tensor.set_requires_grad(true);
        dec_tensors.push_back(p.tensor);
    }
    auto f = [&] {
        EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
        Tensor<double> latent = lms2s::enhance(enc.final_hidden, m.enhancer);
        auto r = lms2s::decode_step(lms2s::decoder_init(latent, dec), enc, dec);
        return lms2s::mean(lms2s::log_softmax(r.logits));
    };
    auto report = lms2s::grad_check(f, {{"decoder", dec_tensors}}, 1e-6, 1e-4);
    EXPECT_TRUE(report.ok) << report.worst;
}

TEST(GreedyDecode, RiggedEosGivesEmptyOutput) {
    Rng rng(700);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    m.dummy_decoder->b_out = Tensor<double>::zeros({d.vocab});
    m.dummy_decoder->b_out.data()[lms2s::kEosId] = 1e6;  // EOS always wins
    std::vector<TokenId> tokens{4, 5};
    EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
    Tensor<double> latent = lms2s::enhance(enc.final_hidden, m.enhancer);
    EXPECT_TRUE(lms2s::greedy_decode(latent, enc, *m.dummy_decoder, 10).empty());
}

TEST(GreedyDecode, LengthBoundedAndPadFree) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        ModelDims d = tiny_dims();
        lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
        std::vector<TokenId> tokens{4, 5, 6};
        EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
        Tensor<double> latent = lms2s::enhance(enc.final_hidden, m.enhancer);
        const auto out = lms2s::greedy_decode(latent, enc, *m.dummy_decoder, 7);
        EXPECT_LE(out.size(), 7u);
        for (TokenId t : out) EXPECT_NE(t, lms2s::kPadId);
    }
}

TEST(GreedyDecode, DeterministicForFixedModel) {
    Rng rng(701);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    std::vector<TokenId> tokens{4, 8, 3};
    EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
    Tensor<double> latent = lms2s::enhance(enc.final_hidden, m.enhancer);
    EXPECT_EQ(lms2s::greedy_decode(latent, enc, *m.dummy_decoder, 12),
              lms2s::greedy_decode(latent, enc, *m.dummy_decoder, 12));
}

// With the encoder and enhancer frozen, a full optimizer step driven by a
// decoder loss must leave their bytes untouched.
TEST(ModelFreezing, FrozenGroupsSurviveTrainingStep) {
    Rng rng(800);
    ModelDims d = tiny_dims();
    lms2s::Model<double> m = lms2s::init_model<double>(d, rng);
    lms2s::freeze_encoder_enhancer(m);
    auto frozen_bytes = [&] {
        std::vector<double> all;
        for (auto& g : lms2s::param_groups(m))
            if (g.frozen)
                for (auto& p : g.params)
                    all.insert(all.end(), p.tensor.data().begin(), p.tensor.data().end());
        return all;
    };
    const auto before = frozen_bytes();

    auto& dec = *m.dummy_decoder;
    std::vector<Tensor<double>> all_tensors;
    for (auto& g : lms2s::param_groups(m))
        for (auto& p : g.params) all_tensors.push_back(p.tensor);
    lms2s::Adam<double> opt(all_tensors, {0.05});
    std::vector<TokenId> tokens{4, 5, 6};
    std::vector<TokenId> labels{5, 6, lms2s::kEosId};
    std::vector<double> weights(d.vocab, 1.0);
    weights[lms2s::kPadId] = 0.0;
    GradTape<double> tape;
    {
        GradTape<double>::Scope scope(tape);
        EncoderOutput<double> enc = lms2s::encode<double>(tokens, m.encoder);
        Tensor<double> latent = lms2s::enhance(enc.final_hidden, m.enhancer);
        auto state = lms2s::decoder_init(latent, dec);
        std::vector<Tensor<double>> rows;
        for (std::size_t t = 0; t < labels.size(); ++t) {
            auto r = lms2s::decode_step(state, enc, dec);
            rows.push_back(r.logits);
            state = r.state;
            state.prev_token = labels[t];
        }
        Tensor<double> loss = lms2s::nll_loss(lms2s::log_softmax(lms2s::stack_rows(rows)),
                                              std::span<const TokenId>(labels),
                                              std::span<const double>(weights));
        tape.backward(loss);
    }
    opt.step();
    EXPECT_EQ(before, frozen_bytes());
}
