// SPDX-License-Identifier: Apache-2.0
//
// Vocabulary and tokenization. Tokenizer is lowercase + split on anything
// that is not a letter or digit; punctuation is dropped.

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

inline const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<unk>"};
    return r;
}

struct Vocabulary {
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token;

    int size() const { return static_cast<int>(id_to_token.size()); }

    int id_of(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? kUnkId : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= size()) {
            throw IndexError("token id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(size()) + ")");
        }
        return id_to_token[static_cast<std::size_t>(id)];
    }
};

struct TokenSequence {
    std::vector<int> ids;
    BoolVec mask;  // 1 = real token
    std::string text;

    int length() const { return static_cast<int>(ids.size()); }
};

inline std::vector<std::string> split_words(const std::string& sentence) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : sentence) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

// Frequency-descending order, lexicographic ties; reserved ids come first.
inline Vocabulary build_vocabulary(const std::vector<std::string>& corpus, int min_freq) {
    if (min_freq < 1) throw UsageError("build_vocabulary min_freq must be >= 1");
    if (corpus.empty()) throw UsageError("build_vocabulary requires a nonempty corpus");
    std::map<std::string, long long> counts;
    for (const std::string& sentence : corpus) {
        for (const std::string& w : split_words(sentence)) ++counts[w];
    }
    std::vector<std::pair<std::string, long long>> kept;
    for (const auto& [w, c] : counts) {
        if (c >= min_freq) kept.emplace_back(w, c);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    v.id_to_token = reserved_tokens();
    for (const auto& [w, c] : kept) v.id_to_token.push_back(w);
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[static_cast<std::size_t>(i)]] = i;
    return v;
}

// <bos> + ids + <eos>, truncated so the total length is at most max_len while
// always keeping the trailing <eos>.
inline TokenSequence tokenize(const std::string& sentence, const Vocabulary& vocab, int max_len) {
    if (max_len < 3) throw UsageError("tokenize max_len must be >= 3");
    std::vector<std::string> words = split_words(sentence);
    TokenSequence seq;
    seq.text = sentence;
    seq.ids.push_back(kBosId);
    int budget = max_len - 2;  // room for words between <bos> and <eos>
    for (const std::string& w : words) {
        if (budget == 0) break;
        seq.ids.push_back(vocab.id_of(w));
        --budget;
    }
    seq.ids.push_back(kEosId);
    seq.mask.assign(seq.ids.size(), 1);
    return seq;
}

// Drops <bos>/<pad>, stops at the first <eos>, joins with single spaces.
inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        if (id == kEosId) break;
        if (id == kBosId || id == kPadId) continue;
        const std::string& tok = vocab.token_of(id);
        if (!out.empty()) out += " ";
        out += tok;
    }
    return out;
}

inline void save_vocabulary(const std::string& path, const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    for (const std::string& tok : vocab.id_to_token) out << tok << "\n";
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        v.id_to_token.push_back(line);
    }
    if (v.size() < kNumReserved) throw FormatError("vocabulary file too short: " + path);
    for (int i = 0; i < kNumReserved; ++i) {
        if (v.id_to_token[static_cast<std::size_t>(i)] != reserved_tokens()[static_cast<std::size_t>(i)]) {
            throw FormatError("vocabulary file " + path + " line " + std::to_string(i + 1) +
                              " must be " + reserved_tokens()[static_cast<std::size_t>(i)]);
        }
    }
    for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[static_cast<std::size_t>(i)]] = i;
    return v;
}

}  // namespace xmodal
