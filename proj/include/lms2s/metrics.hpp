#pragma once

// Evaluation metrics: corpus BLEU with N=4 and uniform weights w_n = 1/4
// (clipped modified n-gram precision, multiplicative brevity penalty), and
// position-wise token accuracy over reference positions.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "lms2s/common.hpp"

namespace lms2s {

inline constexpr int kBleuOrder = 4;

struct BleuAccumulator {
    std::size_t correct[kBleuOrder] = {0, 0, 0, 0};
    std::size_t total[kBleuOrder] = {0, 0, 0, 0};
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;

    void add(const std::vector<TokenId>& hyp, const std::vector<TokenId>& ref) {
        hyp_len += hyp.size();
        ref_len += ref.size();
        for (int n = 1; n <= kBleuOrder; ++n) {
            if (hyp.size() < static_cast<std::size_t>(n)) continue;
            std::map<std::vector<TokenId>, std::size_t> ref_counts;
            if (ref.size() >= static_cast<std::size_t>(n))
                for (std::size_t i = 0; i + n <= ref.size(); ++i)
                    ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
            std::map<std::vector<TokenId>, std::size_t> hyp_counts;
            for (std::size_t i = 0; i + n <= hyp.size(); ++i)
                ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
            for (const auto& [gram, count] : hyp_counts) {
                total[n - 1] += count;
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) correct[n - 1] += std::min(count, it->second);
            }
        }
    }

    // Zero when any order has no match (or no n-grams at all): no smoothing.
    double value() const {
        if (hyp_len == 0) return 0.0;
        double log_precision = 0.0;
        for (int n = 0; n < kBleuOrder; ++n) {
            if (total[n] == 0 || correct[n] == 0) return 0.0;
            log_precision += std::log(static_cast<double>(correct[n]) /
                                      static_cast<double>(total[n]));
        }
        const double bp = hyp_len >= ref_len
                              ? 1.0
                              : std::exp(1.0 - static_cast<double>(ref_len) /
                                                   static_cast<double>(hyp_len));
        return bp * std::exp(log_precision / kBleuOrder);
    }
};

inline double corpus_bleu(const std::vector<std::vector<TokenId>>& hypotheses,
                          const std::vector<std::vector<TokenId>>& references) {
    if (hypotheses.size() != references.size())
        throw ContractError("corpus_bleu: hypothesis/reference count mismatch");
    BleuAccumulator acc;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) acc.add(hypotheses[i], references[i]);
    return acc.value();
}

// Matched positions over reference positions; a missing prediction counts as
// a mismatch.
struct TokenAccuracy {
    std::size_t matched = 0;
    std::size_t total = 0;

    void add(const std::vector<TokenId>& predicted, const std::vector<TokenId>& reference) {
        total += reference.size();
        for (std::size_t i = 0; i < reference.size(); ++i)
            if (i < predicted.size() && predicted[i] == reference[i]) ++matched;
    }

    double value() const {
        return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
    }
};

struct EvalReport {
    std::size_t pairs = 0;
    double token_accuracy = 0.0;
    double exact_match = 0.0;
    double bleu4 = 0.0;
    double silhouette = -1.0;  // -1 when fewer than two clusters are populated
    std::vector<std::size_t> cluster_counts;

    std::string to_text() const {
        std::ostringstream os;
        os.precision(17);
        os << "pairs: " << pairs << '\n';
        os << "token_accuracy: " << token_accuracy << '\n';
        os << "exact_match: " << exact_match << '\n';
        os << "bleu4: " << bleu4 << '\n';
        os << "silhouette: " << silhouette << '\n';
        for (std::size_t i = 0; i < cluster_counts.size(); ++i)
            os << "cluster_count_" << i << ": " << cluster_counts[i] << '\n';
        return os.str();
    }
};

}  // namespace lms2s
