#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "lms2s/metrics.hpp"
#include "lms2s/rng.hpp"
#include "oracles.hpp"

using lms2s::TokenId;

namespace {

std::vector<TokenId> seq(std::initializer_list<int> xs) { return {xs.begin(), xs.end()}; }

}  // namespace

TEST(Bleu, IdenticalSentenceScoresOne) {
    const auto s = seq({4, 5, 6, 7, 8});
    EXPECT_DOUBLE_EQ(lms2s::corpus_bleu({s}, {s}), 1.0);
}

TEST(Bleu, NoOverlapScoresZero) {
    EXPECT_DOUBLE_EQ(lms2s::corpus_bleu({seq({4, 5, 6, 7})}, {seq({8, 9, 10, 11})}), 0.0);
}

TEST(Bleu, RepeatedTokenClippingKillsBigramPrecision) {
    // "the the the" vs "the cat sat": clipped 1-gram precision 1/3 but no
    // bigram match, so the unsmoothed score is 0.
    EXPECT_DOUBLE_EQ(lms2s::corpus_bleu({seq({4, 4, 4})}, {seq({4, 5, 6})}), 0.0);
}

TEST(Bleu, SingleSubstitutionHandValue) {
    // p1=4/5, p2=3/4, p3=2/3, p4=1/2, equal lengths: BLEU = 0.2^(1/4)
    const double value = lms2s::corpus_bleu({seq({1, 2, 3, 4, 5})}, {seq({1, 2, 3, 4, 6})});
    EXPECT_NEAR(value, std::pow(0.2, 0.25), 1e-12);
}

TEST(Bleu, BrevityPenaltyHandValue) {
    // all precisions 1, hypothesis 4 vs reference 5: BLEU = exp(1 - 5/4)
    const double value = lms2s::corpus_bleu({seq({1, 2, 3, 4})}, {seq({1, 2, 3, 4, 5})});
    EXPECT_NEAR(value, std::exp(-0.25), 1e-12);
}

TEST(Bleu, CorpusAggregationHandValue) {
    // counts pooled over both pairs before the geometric mean:
    // c/t = 7/8, 4/6, 2/4, 1/2 with equal total lengths
    const double value = lms2s::corpus_bleu({seq({1, 2, 3, 4}), seq({5, 6, 7, 8})},
                                            {seq({1, 2, 3, 4}), seq({5, 6, 9, 8})});
    const double expect = std::pow((7.0 / 8.0) * (4.0 / 6.0) * (2.0 / 4.0) * (1.0 / 2.0), 0.25);
    EXPECT_NEAR(value, expect, 1e-12);
}

TEST(Bleu, CountMismatchThrows) {
    EXPECT_THROW(lms2s::corpus_bleu({seq({1})}, {}), lms2s::ContractError);
}

TEST(TokenAccuracy, PerfectAndEmptyCases) {
    lms2s::TokenAccuracy acc;
    acc.add(seq({1, 2, 3}), seq({1, 2, 3}));
    EXPECT_DOUBLE_EQ(acc.value(), 1.0);
    lms2s::TokenAccuracy empty;
    EXPECT_DOUBLE_EQ(empty.value(), 0.0);
}

TEST(TokenAccuracy, ShortPredictionCountsMissingAsWrong) {
    lms2s::TokenAccuracy acc;
    acc.add(seq({1, 2}), seq({1, 2, 3, 4}));
    EXPECT_DOUBLE_EQ(acc.value(), 0.5);
}

TEST(TokenAccuracy, MatchesPositionLoopOracleOnRandomCases) {
    lms2s::Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t pairs = 1 + static_cast<std::size_t>(rng.uniform_int(0, 7));
        lms2s::TokenAccuracy acc;
        std::vector<std::vector<int>> preds, refs;
        for (std::size_t p = 0; p < pairs; ++p) {
            std::vector<TokenId> pred, ref;
            const std::size_t plen = static_cast<std::size_t>(rng.uniform_int(0, 9));
            const std::size_t rlen = 1 + static_cast<std::size_t>(rng.uniform_int(0, 8));
            for (std::size_t i = 0; i < plen; ++i)
                pred.push_back(static_cast<TokenId>(rng.uniform_int(0, 4)));
            for (std::size_t i = 0; i < rlen; ++i)
                ref.push_back(static_cast<TokenId>(rng.uniform_int(0, 4)));
            acc.add(pred, ref);
            preds.emplace_back(pred.begin(), pred.end());
            refs.emplace_back(ref.begin(), ref.end());
        }
        EXPECT_DOUBLE_EQ(acc.value(), oracles::token_accuracy(preds, refs)) << "trial " << trial;
    }
}
