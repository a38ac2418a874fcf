#pragma once

// Corpus ingestion and synthetic data generation. Corpus files are UTF-8,
// one pair per line, source and target separated by a single TAB and
// whitespace-tokenized. Vocabulary ids 0..3 are reserved for
// <pad>, <sos>, <eos>, <unk>.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "lms2s/common.hpp"
#include "lms2s/rng.hpp"
#include "lms2s/seq2seq.hpp"

namespace lms2s {

class Vocabulary {
public:
    Vocabulary() {
        for (const char* t : {"<pad>", "<sos>", "<eos>", "<unk>"}) add(t);
    }

    TokenId add(const std::string& token) {
        auto it = tok2id_.find(token);
        if (it != tok2id_.end()) return it->second;
        const TokenId id = static_cast<TokenId>(id2tok_.size());
        id2tok_.push_back(token);
        tok2id_.emplace(token, id);
        return id;
    }

    TokenId id(const std::string& token) const {
        auto it = tok2id_.find(token);
        return it == tok2id_.end() ? kUnkId : it->second;
    }

    const std::string& token(TokenId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= id2tok_.size())
            throw IndexError("vocabulary: id " + std::to_string(id) + " out of range");
        return id2tok_[static_cast<std::size_t>(id)];
    }

    bool contains(const std::string& token) const { return tok2id_.count(token) > 0; }
    std::size_t size() const { return id2tok_.size(); }

    std::vector<TokenId> encode(const std::vector<std::string>& tokens) const {
        std::vector<TokenId> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id(t));
        return ids;
    }

    std::vector<std::string> decode(const std::vector<TokenId>& ids) const {
        std::vector<std::string> tokens;
        tokens.reserve(ids.size());
        for (TokenId i : ids) tokens.push_back(token(i));
        return tokens;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("vocabulary: cannot write " + path);
        for (const auto& t : id2tok_) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("vocabulary: cannot read " + path);
        Vocabulary v;
        std::string line;
        std::size_t idx = 0;
        while (std::getline(in, line)) {
            if (idx < 4) {
                if (line != v.id2tok_[idx])
                    throw IoError("vocabulary: reserved token mismatch at id " +
                                  std::to_string(idx) + " in " + path);
            } else {
                v.add(line);
            }
            ++idx;
        }
        if (idx < 4) throw IoError("vocabulary: truncated file " + path);
        return v;
    }

private:
    std::vector<std::string> id2tok_;
    std::unordered_map<std::string, TokenId> tok2id_;
};

struct SentencePair {
    std::vector<TokenId> source;
    std::vector<TokenId> target;
};

struct Corpus {
    std::vector<SentencePair> pairs;
    std::string split;  // train / valid / test
};

struct LoadReport {
    std::size_t loaded = 0;
    std::size_t rejected_too_long = 0;
};

enum class VocabPolicy {
    Build,  // training split: every token enters the vocabulary
    Apply,  // other splits: unseen tokens map to <unk>
};

struct LoadedCorpus {
    Corpus corpus;
    Vocabulary vocab;
    LoadReport report;
};

inline std::vector<std::string> split_whitespace(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> tokens;
    std::string tok;
    while (is >> tok) tokens.push_back(tok);
    return tokens;
}

// Loads "source<TAB>target" lines. With VocabPolicy::Apply, `existing` is the
// training vocabulary. Lines longer than max_len tokens on either side are
// skipped and counted in the report.
inline LoadedCorpus load_parallel_corpus(const std::string& path, VocabPolicy policy,
                                         const Vocabulary* existing = nullptr,
                                         std::size_t max_len = 30,
                                         const std::string& split = "train") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("corpus: cannot open " + path);
    LoadedCorpus result;
    result.corpus.split = split;
    if (policy == VocabPolicy::Apply) {
        if (!existing) throw ContractError("corpus: Apply policy needs an existing vocabulary");
        result.vocab = *existing;
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw IoError("corpus: line " + std::to_string(line_no) + " of " + path +
                          " has no TAB separator");
        const auto src_toks = split_whitespace(line.substr(0, tab));
        const auto tgt_toks = split_whitespace(line.substr(tab + 1));
        if (src_toks.empty() || tgt_toks.empty())
            throw IoError("corpus: line " + std::to_string(line_no) + " of " + path +
                          " has an empty side");
        if (src_toks.size() > max_len || tgt_toks.size() > max_len) {
            ++result.report.rejected_too_long;
            continue;
        }
        SentencePair pair;
        if (policy == VocabPolicy::Build) {
            for (const auto& t : src_toks) pair.source.push_back(result.vocab.add(t));
            for (const auto& t : tgt_toks) pair.target.push_back(result.vocab.add(t));
        } else {
            pair.source = result.vocab.encode(src_toks);
            pair.target = result.vocab.encode(tgt_toks);
        }
        result.corpus.pairs.push_back(std::move(pair));
        ++result.report.loaded;
    }
    if (result.corpus.pairs.empty()) throw IoError("corpus: no pairs loaded from " + path);
    return result;
}

// ---------------------------------------------------------------------------
// Synthetic heterogeneous corpus. Two target grammars over one shared
// alphabet: G1 reverses the source, G2 maps every token through a fixed
// substitution table (a half-rotation of the alphabet). Sources carry no
// grammar marker token; the grammars differ only in which half of the
// alphabet they favor when sampling (the tilt), so a router has to learn the
// distributional cue. Sources whose two candidate targets coincide are
// redrawn so each pair satisfies exactly one grammar.
// ---------------------------------------------------------------------------

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n_pairs = 600;
    double mix = 0.5;        // fraction of G1 pairs (exact after rounding)
    int alphabet = 40;
    int min_len = 4;
    int max_len = 9;
    double tilt = 0.85;      // probability a token is drawn from the grammar's own half
    // Exponent of the mirrored length weighting: G1 favors short sources,
    // G2 long ones, with fully overlapping supports. 0 = uniform lengths.
    double len_tilt = 1.0;
};

struct SynthPair {
    std::vector<std::string> source;
    std::vector<std::string> target;
    int grammar = 1;  // 1 or 2
};

inline std::string synth_token(int index) { return "t" + std::to_string(index); }

inline std::vector<std::string> g1_target(const std::vector<std::string>& source) {
    return {source.rbegin(), source.rend()};
}

inline std::vector<std::string> g2_target(const std::vector<std::string>& source, int alphabet) {
    std::vector<std::string> out;
    out.reserve(source.size());
    const int shift = alphabet / 2;
    for (const auto& tok : source) {
        const int idx = std::stoi(tok.substr(1));
        out.push_back(synth_token((idx + shift) % alphabet));
    }
    return out;
}

inline std::vector<SynthPair> generate_synthetic_heterogeneous(const SynthConfig& cfg) {
    if (cfg.n_pairs < 2) throw ContractError("synthetic corpus: need at least 2 pairs");
    if (cfg.mix <= 0.0 || cfg.mix >= 1.0)
        throw ContractError("synthetic corpus: mix must be in (0, 1)");
    const std::size_t g1_count =
        static_cast<std::size_t>(std::llround(cfg.mix * static_cast<double>(cfg.n_pairs)));
    std::vector<int> grammars(cfg.n_pairs, 2);
    std::fill(grammars.begin(), grammars.begin() + g1_count, 1);
    Rng rng(cfg.seed);
    // Fisher-Yates so grammar order is not positional.
    for (std::size_t i = grammars.size(); i > 1; --i)
        std::swap(grammars[i - 1], grammars[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);

    const int half = cfg.alphabet / 2;
    // Mirrored length weights: rank^len_tilt toward short (G1) or long (G2).
    const int n_lens = cfg.max_len - cfg.min_len + 1;
    std::vector<double> w_short(n_lens), cum_g1(n_lens), cum_g2(n_lens);
    double total = 0.0;
    for (int i = 0; i < n_lens; ++i) {
        w_short[i] = std::pow(static_cast<double>(n_lens - i), cfg.len_tilt);
        total += w_short[i];
    }
    double acc1 = 0.0, acc2 = 0.0;
    for (int i = 0; i < n_lens; ++i) {
        acc1 += w_short[i] / total;
        acc2 += w_short[n_lens - 1 - i] / total;
        cum_g1[i] = acc1;
        cum_g2[i] = acc2;
    }
    auto draw_len = [&](int g, double u) {
        const auto& cum = g == 1 ? cum_g1 : cum_g2;
        for (int i = 0; i < n_lens; ++i)
            if (u < cum[i]) return cfg.min_len + i;
        return cfg.max_len;
    };

    std::vector<SynthPair> pairs;
    pairs.reserve(cfg.n_pairs);
    for (int g : grammars) {
        SynthPair p;
        p.grammar = g;
        while (true) {
            const int len = draw_len(g, rng.next_double());
            p.source.clear();
            for (int i = 0; i < len; ++i) {
                const bool own_half = rng.next_double() < cfg.tilt;
                const int lo = (g == 1) == own_half ? 0 : half;
                p.source.push_back(synth_token(static_cast<int>(rng.uniform_int(lo, lo + half - 1))));
            }
            if (g1_target(p.source) != g2_target(p.source, cfg.alphabet)) break;
        }
        p.target = g == 1 ? g1_target(p.source) : g2_target(p.source, cfg.alphabet);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

inline void write_corpus(const std::string& path, const std::vector<SynthPair>& pairs,
                         std::size_t begin, std::size_t end) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("corpus: cannot write " + path);
    for (std::size_t i = begin; i < end && i < pairs.size(); ++i) {
        for (std::size_t t = 0; t < pairs[i].source.size(); ++t) {
            if (t) out << ' ';
            out << pairs[i].source[t];
        }
        out << '\t';
        for (std::size_t t = 0; t < pairs[i].target.size(); ++t) {
            if (t) out << ' ';
            out << pairs[i].target[t];
        }
        out << '\n';
    }
}

}  // namespace lms2s
