// SPDX-License-Identifier: Apache-2.0
//
// Decode strategies: greedy decoding and beam search with a completed pool
// and length normalization. Strategies are generic over a step model:
//
//   struct Model {
//     using State = ...;                       // value type, fork-safe
//     int vocab_size() const;
//     State start() const;                     // <bos> consumed
//     const std::vector<double>& logprobs(const State&) const;
//     State advance(const State&, int token_id) const;
//   };
//
// <pad>, <bos> and <unk> are never selected; scores are the raw accumulated
// log-probabilities of the chosen tokens. All ties break toward the
// lexicographically smallest id sequence.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/vocab.hpp"

namespace xmodal {

inline bool decode_selectable(int id) { return id != kPadId && id != kBosId && id != kUnkId; }

template <typename Model>
struct Hypothesis {
    std::vector<int> ids;  // starts with <bos>
    double logp = 0.0;
    bool finished = false;
    typename Model::State state;
};

struct ScoredSequence {
    std::vector<int> ids;  // starts with <bos>
    double logp = 0.0;
    double score = 0.0;  // length-normalized
};

struct BeamResult {
    TokenSequence best;
    std::vector<ScoredSequence> nbest;
};

namespace detail {

inline TokenSequence to_token_sequence(const std::vector<int>& ids) {
    TokenSequence seq;
    seq.ids = ids;
    seq.mask.assign(ids.size(), 1);
    return seq;
}

inline double length_normalized(double logp, const std::vector<int>& ids, double alpha) {
    const double len = std::max<std::size_t>(1, ids.size() - 1);  // without <bos>
    return alpha == 0.0 ? logp : logp / std::pow(len, alpha);
}

}  // namespace detail

template <typename Model>
TokenSequence greedy_decode(const Model& model, int max_len) {
    if (max_len < 1) throw ConfigError("greedy decode max_len must be >= 1");
    const int v = model.vocab_size();
    std::vector<int> ids = {kBosId};
    typename Model::State state = model.start();
    for (int t = 0; t < max_len; ++t) {
        const std::vector<double>& lp = model.logprobs(state);
        if (static_cast<int>(lp.size()) != v) throw ShapeError("model log-probs length mismatch");
        int best = -1;
        for (int id = 0; id < v; ++id) {
            if (!decode_selectable(id)) continue;
            if (best < 0 || lp[static_cast<std::size_t>(id)] > lp[static_cast<std::size_t>(best)]) best = id;
        }
        ids.push_back(best);
        if (best == kEosId) break;
        if (t + 1 < max_len) state = model.advance(state, best);
    }
    return detail::to_token_sequence(ids);
}

template <typename Model>
BeamResult beam_search(const Model& model, int width, int max_len, double alpha) {
    if (width < 1) throw ConfigError("beam width must be >= 1");
    if (max_len < 1) throw ConfigError("beam decode max_len must be >= 1");
    if (alpha < 0) throw ConfigError("beam alpha must be >= 0");
    const int v = model.vocab_size();

    using Hyp = Hypothesis<Model>;
    std::vector<Hyp> live;
    live.push_back(Hyp{{kBosId}, 0.0, false, model.start()});
    std::vector<ScoredSequence> completed;

    struct Candidate {
        double logp;
        std::size_t parent;
        int id;
    };
    auto candidate_less = [&live](const Candidate& a, const Candidate& b) {
        if (a.logp != b.logp) return a.logp > b.logp;
        // tie: lexicographically smallest full id sequence first
        const std::vector<int>& pa = live[a.parent].ids;
        const std::vector<int>& pb = live[b.parent].ids;
        const std::size_t n = std::min(pa.size(), pb.size());
        for (std::size_t i = 0; i < n; ++i) {
            if (pa[i] != pb[i]) return pa[i] < pb[i];
        }
        if (pa.size() != pb.size()) return pa.size() < pb.size();
        return a.id < b.id;
    };

    for (int step = 0; step < max_len && !live.empty(); ++step) {
        std::vector<Candidate> candidates;
        candidates.reserve(live.size() * static_cast<std::size_t>(v));
        for (std::size_t p = 0; p < live.size(); ++p) {
            const std::vector<double>& lp = model.logprobs(live[p].state);
            for (int id = 0; id < v; ++id) {
                if (!decode_selectable(id)) continue;
                candidates.push_back({live[p].logp + lp[static_cast<std::size_t>(id)], p, id});
            }
        }
        std::sort(candidates.begin(), candidates.end(), candidate_less);

        // Fill `width` live slots best-first; finished candidates seen on the
        // way move to the completed pool and free their slot.
        std::vector<Hyp> next_live;
        for (const Candidate& c : candidates) {
            if (static_cast<int>(next_live.size()) >= width) break;
            std::vector<int> ids = live[c.parent].ids;
            ids.push_back(c.id);
            if (c.id == kEosId) {
                completed.push_back({ids, c.logp, detail::length_normalized(c.logp, ids, alpha)});
            } else {
                Hyp h;
                h.ids = std::move(ids);
                h.logp = c.logp;
                h.finished = false;
                // advance lazily only when the hypothesis survives pruning
                h.state = model.advance(live[c.parent].state, c.id);
                next_live.push_back(std::move(h));
            }
        }
        live = std::move(next_live);

        if (!completed.empty() && !live.empty() && step + 1 < max_len) {
            double best_completed = completed[0].score;
            for (const ScoredSequence& s : completed) best_completed = std::max(best_completed, s.score);
            double best_live_ub = -std::numeric_limits<double>::infinity();
            for (const Hyp& h : live) {
                const double ub = alpha == 0.0 ? h.logp : h.logp / std::pow(static_cast<double>(max_len), alpha);
                best_live_ub = std::max(best_live_ub, ub);
            }
            if (best_live_ub < best_completed) break;  // no live hypothesis can still win
        }
    }

    std::vector<ScoredSequence> pool = completed;
    for (const Hyp& h : live) {
        pool.push_back({h.ids, h.logp, detail::length_normalized(h.logp, h.ids, alpha)});
    }
    if (pool.empty()) throw UsageError("beam search produced no hypotheses");
    std::sort(pool.begin(), pool.end(), [](const ScoredSequence& a, const ScoredSequence& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.ids < b.ids;
    });

    BeamResult result;
    result.best = detail::to_token_sequence(pool[0].ids);
    result.nbest = std::move(pool);
    return result;
}

}  // namespace xmodal
