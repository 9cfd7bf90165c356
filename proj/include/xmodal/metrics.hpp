// SPDX-License-Identifier: Apache-2.0
//
// Caption metrics over token-id lists: BLEU-4 (no smoothing), ROUGE-L
// (LCS F-measure, beta = 1.2), and CIDEr-D (tf-idf n-gram cosine with
// length penalty, scaled to [0, 10]).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

using TokenList = std::vector<int>;
using NGram = std::vector<int>;
using NGramCounts = std::map<NGram, long long>;

inline NGramCounts ngram_counts(const TokenList& tokens, int n) {
    NGramCounts counts;
    if (static_cast<int>(tokens.size()) >= n) {
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
            ++counts[NGram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                           tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
        }
    }
    return counts;
}

// ---------------------------------------------------------------------------
// BLEU-4: geometric mean of clipped n-gram precisions times brevity penalty;
// any zero precision gives 0.

inline double bleu4(const TokenList& candidate, const std::vector<TokenList>& references) {
    if (references.empty()) throw UsageError("bleu4 requires at least one reference");
    if (candidate.empty()) return 0.0;
    const auto c_len = static_cast<long long>(candidate.size());

    double log_precision_sum = 0.0;
    for (int n = 1; n <= 4; ++n) {
        NGramCounts cand = ngram_counts(candidate, n);
        long long total = 0, matched = 0;
        for (const auto& [gram, count] : cand) {
            long long best_ref = 0;
            for (const TokenList& ref : references) {
                NGramCounts rc = ngram_counts(ref, n);
                auto it = rc.find(gram);
                if (it != rc.end()) best_ref = std::max(best_ref, it->second);
            }
            matched += std::min(count, best_ref);
            total += count;
        }
        if (total == 0 || matched == 0) return 0.0;
        log_precision_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }

    // closest reference length; ties prefer the shorter reference
    long long r_len = static_cast<long long>(references[0].size());
    for (const TokenList& ref : references) {
        const auto len = static_cast<long long>(ref.size());
        if (std::llabs(len - c_len) < std::llabs(r_len - c_len) ||
            (std::llabs(len - c_len) == std::llabs(r_len - c_len) && len < r_len)) {
            r_len = len;
        }
    }
    const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(r_len) / static_cast<double>(c_len)));
    return bp * std::exp(log_precision_sum / 4.0);
}

// ---------------------------------------------------------------------------
// ROUGE-L: LCS-based F-measure, max over references.

namespace detail {

inline long long lcs_length(const TokenList& a, const TokenList& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<long long> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace detail

inline double rouge_l(const TokenList& candidate, const std::vector<TokenList>& references) {
    if (references.empty()) throw UsageError("rouge_l requires at least one reference");
    const double beta = 1.2;
    double best = 0.0;
    for (const TokenList& ref : references) {
        if (candidate.empty() || ref.empty()) continue;
        const double lcs = static_cast<double>(detail::lcs_length(candidate, ref));
        if (lcs == 0.0) continue;
        const double recall = lcs / static_cast<double>(ref.size());
        const double precision = lcs / static_cast<double>(candidate.size());
        const double f = (1.0 + beta * beta) * recall * precision / (recall + beta * beta * precision);
        best = std::max(best, f);
    }
    return best;
}

// ---------------------------------------------------------------------------
// CIDEr-D. The idf table is built from the evaluation corpus references:
// idf(g) = log(N) - log(max(1, df(g))) with df counting images whose
// reference set contains g.

struct CiderIdf {
    std::array<std::map<NGram, double>, 4> idf;  // per n, n = index + 1
    double log_num_images = 0.0;
    int num_images = 0;

    double lookup(int n, const NGram& gram) const {
        const auto& table = idf[static_cast<std::size_t>(n - 1)];
        auto it = table.find(gram);
        return it == table.end() ? log_num_images : it->second;
    }
};

inline CiderIdf build_cider_idf(const std::vector<std::vector<TokenList>>& references_per_image) {
    if (references_per_image.empty()) throw UsageError("cider idf needs at least one image");
    CiderIdf out;
    out.num_images = static_cast<int>(references_per_image.size());
    out.log_num_images = std::log(static_cast<double>(out.num_images));
    for (int n = 1; n <= 4; ++n) {
        std::map<NGram, long long> df;
        for (const auto& refs : references_per_image) {
            std::map<NGram, bool> seen;
            for (const TokenList& ref : refs) {
                for (const auto& [gram, count] : ngram_counts(ref, n)) seen[gram] = true;
            }
            for (const auto& [gram, present] : seen) ++df[gram];
        }
        for (const auto& [gram, count] : df) {
            out.idf[static_cast<std::size_t>(n - 1)][gram] =
                out.log_num_images - std::log(std::max(1.0, static_cast<double>(count)));
        }
    }
    return out;
}

namespace detail {

struct TfIdfVec {
    std::map<NGram, double> weights;
    double norm = 0.0;
};

inline TfIdfVec tfidf_vector(const TokenList& tokens, int n, const CiderIdf& idf) {
    TfIdfVec v;
    double sq = 0.0;
    for (const auto& [gram, count] : ngram_counts(tokens, n)) {
        const double w = static_cast<double>(count) * idf.lookup(n, gram);
        v.weights[gram] = w;
        sq += w * w;
    }
    v.norm = std::sqrt(sq);
    return v;
}

// Clipped cosine: sum over grams of min(c_g, r_g) * r_g / (|c| * |r|).
inline double clipped_cosine(const TfIdfVec& cand, const TfIdfVec& ref) {
    if (cand.norm == 0.0 || ref.norm == 0.0) return 0.0;
    double dot = 0.0;
    for (const auto& [gram, rw] : ref.weights) {
        auto it = cand.weights.find(gram);
        if (it == cand.weights.end()) continue;
        dot += std::min(it->second, rw) * rw;
    }
    return dot / (cand.norm * ref.norm);
}

}  // namespace detail

inline double cider_d(const TokenList& candidate, const std::vector<TokenList>& references,
                      const CiderIdf& idf) {
    if (references.empty()) throw UsageError("cider_d requires at least one reference");
    if (idf.num_images == 0) throw UsageError("cider_d requires a nonempty idf table");
    const double sigma = 6.0;
    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
        detail::TfIdfVec cand = detail::tfidf_vector(candidate, n, idf);
        double score_n = 0.0;
        for (const TokenList& ref : references) {
            detail::TfIdfVec rv = detail::tfidf_vector(ref, n, idf);
            const double delta = static_cast<double>(candidate.size()) - static_cast<double>(ref.size());
            const double penalty = std::exp(-(delta * delta) / (2.0 * sigma * sigma));
            score_n += detail::clipped_cosine(cand, rv) * penalty;
        }
        total += score_n / static_cast<double>(references.size());
    }
    return 10.0 * total / 4.0;
}

}  // namespace xmodal
