// SPDX-License-Identifier: Apache-2.0
//
// Visual tokens, batching, caption files, and the shape-world synthetic
// datasets used for desk-scale training runs.

#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"
#include "xmodal/vocab.hpp"
#include "xmodal/xtns.hpp"

namespace xmodal {

struct RelationEdge {
    int src = 0;
    int dst = 0;
    int relation = 0;
};

struct VisualTokens {
    Tensor features;  // N x d_v
    std::vector<RelationEdge> edges;
    Tensor global;  // d_v, mean over rows

    int num_regions() const { return features.dim(0); }
    int feature_dim() const { return features.dim(1); }
};

inline Tensor mean_rows(const Tensor& m) {
    const int n = m.dim(0), d = m.dim(1);
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(j)] += m.values()[static_cast<std::size_t>(i) * d + j];
    for (double& x : out) x /= n;
    return Tensor({d}, std::move(out));
}

inline VisualTokens make_visual_tokens(Tensor features, std::vector<RelationEdge> edges = {}) {
    if (features.rank() != 2) throw ShapeError("visual features must be rank-2, got " + features.shape_str());
    const int n = features.dim(0);
    for (const RelationEdge& e : edges) {
        if (e.src < 0 || e.src >= n || e.dst < 0 || e.dst >= n) {
            throw IndexError("edge endpoint out of range for " + std::to_string(n) + " regions");
        }
    }
    VisualTokens v;
    v.global = mean_rows(features);
    v.features = std::move(features);
    v.edges = std::move(edges);
    return v;
}

// ---------------------------------------------------------------------------
// XTNS-backed feature files

inline void save_visual_features(const std::string& path, const VisualTokens& v) {
    std::vector<XtnsEntry> entries;
    XtnsEntry feat;
    feat.name = "features";
    feat.dtype = 0;
    feat.dims = {static_cast<std::uint32_t>(v.features.dim(0)), static_cast<std::uint32_t>(v.features.dim(1))};
    feat.f32.reserve(v.features.size());
    for (double x : v.features.values()) feat.f32.push_back(static_cast<float>(x));
    entries.push_back(std::move(feat));
    if (!v.edges.empty()) {
        XtnsEntry edges;
        edges.name = "edges";
        edges.dtype = 1;
        edges.dims = {static_cast<std::uint32_t>(v.edges.size()), 3};
        for (const RelationEdge& e : v.edges) {
            edges.i64.push_back(e.src);
            edges.i64.push_back(e.dst);
            edges.i64.push_back(e.relation);
        }
        entries.push_back(std::move(edges));
    }
    xtns_write_file(path, entries);
}

inline VisualTokens load_visual_features(const std::string& path) {
    std::vector<XtnsEntry> entries = xtns_read_file(path);
    const XtnsEntry* feat = xtns_find(entries, "features");
    if (!feat) throw FormatError("features file " + path + " has no 'features' entry");
    if (feat->dtype != 0 || feat->dims.size() != 2) {
        throw FormatError("features entry in " + path + " must be a rank-2 f32 tensor");
    }
    std::vector<double> vals(feat->f32.begin(), feat->f32.end());
    for (double x : vals) {
        if (!std::isfinite(x)) throw FormatError("non-finite feature value in " + path);
    }
    Tensor features({static_cast<int>(feat->dims[0]), static_cast<int>(feat->dims[1])}, std::move(vals));
    std::vector<RelationEdge> edges;
    if (const XtnsEntry* e = xtns_find(entries, "edges")) {
        if (e->dtype != 1 || e->dims.size() != 2 || e->dims[1] != 3) {
            throw FormatError("edges entry in " + path + " must be an Ex3 i64 tensor");
        }
        for (std::size_t i = 0; i < e->dims[0]; ++i) {
            edges.push_back({static_cast<int>(e->i64[i * 3]), static_cast<int>(e->i64[i * 3 + 1]),
                             static_cast<int>(e->i64[i * 3 + 2])});
        }
    }
    return make_visual_tokens(std::move(features), std::move(edges));
}

// ---------------------------------------------------------------------------
// Caption files: UTF-8 lines "id<TAB>caption".

struct CaptionRecord {
    std::string id;
    std::string caption;
};

inline std::vector<CaptionRecord> load_captions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    std::vector<CaptionRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw FormatError(path + " line " + std::to_string(line_no) + ": expected id<TAB>caption");
        }
        out.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return out;
}

inline void save_captions(const std::string& path, const std::vector<CaptionRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    for (const CaptionRecord& r : records) out << r.id << "\t" << r.caption << "\n";
}

// ---------------------------------------------------------------------------
// Shape-world synthetic data

inline const std::array<std::string, 3>& shape_world_colors() {
    static const std::array<std::string, 3> c = {"red", "blue", "green"};
    return c;
}

inline const std::array<std::string, 3>& shape_world_shapes() {
    static const std::array<std::string, 3> s = {"circle", "square", "triangle"};
    return s;
}

struct CaptionExample {
    VisualTokens visual;
    std::string caption;
};

// Region feature: one-hot(color) ++ one-hot(shape) ++ Gaussian noise.
// Caption: "a <color1> <shape1> and a <color2> <shape2>" over the first two
// regions. Fully determined by the seed.
inline std::vector<CaptionExample> make_synthetic_dataset(std::uint64_t seed, int n, int n_regions,
                                                          int noise_dims = 2, double noise_sigma = 0.1) {
    if (n < 1) throw UsageError("make_synthetic_dataset requires n >= 1");
    if (n_regions < 2) throw UsageError("make_synthetic_dataset requires n_regions >= 2");
    if (noise_dims < 0) throw UsageError("noise_dims must be >= 0");
    std::vector<CaptionExample> out;
    out.reserve(static_cast<std::size_t>(n));
    Rng base = Rng(seed).derive("shape_world");
    const int dv = 6 + noise_dims;
    for (int i = 0; i < n; ++i) {
        Rng rng = base.derive(static_cast<std::uint64_t>(i));
        std::vector<double> features(static_cast<std::size_t>(n_regions) * dv, 0.0);
        std::vector<int> colors(static_cast<std::size_t>(n_regions));
        std::vector<int> shapes(static_cast<std::size_t>(n_regions));
        for (int r = 0; r < n_regions; ++r) {
            colors[static_cast<std::size_t>(r)] = static_cast<int>(rng.below(3));
            shapes[static_cast<std::size_t>(r)] = static_cast<int>(rng.below(3));
            double* row = &features[static_cast<std::size_t>(r) * dv];
            row[colors[static_cast<std::size_t>(r)]] = 1.0;
            row[3 + shapes[static_cast<std::size_t>(r)]] = 1.0;
            for (int k = 0; k < noise_dims; ++k) {
                // Box-Muller from two uniforms keeps the stream platform-stable.
                double u1 = rng.uniform();
                double u2 = rng.uniform();
                u1 = std::max(u1, 1e-12);
                row[6 + k] = noise_sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
            }
        }
        std::ostringstream caption;
        caption << "a " << shape_world_colors()[static_cast<std::size_t>(colors[0])] << " "
                << shape_world_shapes()[static_cast<std::size_t>(shapes[0])] << " and a "
                << shape_world_colors()[static_cast<std::size_t>(colors[1])] << " "
                << shape_world_shapes()[static_cast<std::size_t>(shapes[1])];
        out.push_back({make_visual_tokens(Tensor({n_regions, dv}, std::move(features))), caption.str()});
    }
    return out;
}

// Variant with pairwise distinct captions; used for retrieval sets.
inline std::vector<CaptionExample> make_synthetic_dataset_distinct(std::uint64_t seed, int n, int n_regions,
                                                                   int noise_dims = 2,
                                                                   double noise_sigma = 0.1) {
    std::vector<CaptionExample> out;
    std::vector<std::string> seen;
    int offset = 0;
    while (static_cast<int>(out.size()) < n) {
        auto batch = make_synthetic_dataset(seed + static_cast<std::uint64_t>(offset), n, n_regions,
                                            noise_dims, noise_sigma);
        for (auto& ex : batch) {
            bool dup = false;
            for (const std::string& s : seen)
                if (s == ex.caption) dup = true;
            if (!dup) {
                seen.push_back(ex.caption);
                out.push_back(std::move(ex));
                if (static_cast<int>(out.size()) == n) break;
            }
        }
        ++offset;
        if (offset > 64) throw UsageError("cannot draw enough distinct captions");
    }
    return out;
}

struct VqaExample {
    VisualTokens visual;
    std::string question;
    int answer = 0;  // index into shape_world_colors()
};

// "what color is the <shape>" over images whose region shapes are distinct,
// so the answer is unambiguous.
inline std::vector<VqaExample> make_synthetic_vqa(std::uint64_t seed, int n, int n_regions,
                                                  int noise_dims = 2, double noise_sigma = 0.1) {
    if (n < 1) throw UsageError("make_synthetic_vqa requires n >= 1");
    if (n_regions < 2 || n_regions > 3) throw UsageError("make_synthetic_vqa requires 2 or 3 regions");
    std::vector<VqaExample> out;
    out.reserve(static_cast<std::size_t>(n));
    Rng base = Rng(seed).derive("shape_world_vqa");
    const int dv = 6 + noise_dims;
    for (int i = 0; i < n; ++i) {
        Rng rng = base.derive(static_cast<std::uint64_t>(i));
        std::vector<int> shapes = {0, 1, 2};
        rng.shuffle(shapes);
        shapes.resize(static_cast<std::size_t>(n_regions));
        std::vector<double> features(static_cast<std::size_t>(n_regions) * dv, 0.0);
        std::vector<int> colors(static_cast<std::size_t>(n_regions));
        for (int r = 0; r < n_regions; ++r) {
            colors[static_cast<std::size_t>(r)] = static_cast<int>(rng.below(3));
            double* row = &features[static_cast<std::size_t>(r) * dv];
            row[colors[static_cast<std::size_t>(r)]] = 1.0;
            row[3 + shapes[static_cast<std::size_t>(r)]] = 1.0;
            for (int k = 0; k < noise_dims; ++k) {
                double u1 = std::max(rng.uniform(), 1e-12);
                double u2 = rng.uniform();
                row[6 + k] = noise_sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
            }
        }
        int target = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_regions)));
        VqaExample ex;
        ex.question = "what color is the " + shape_world_shapes()[static_cast<std::size_t>(shapes[static_cast<std::size_t>(target)])];
        ex.answer = colors[static_cast<std::size_t>(target)];
        ex.visual = make_visual_tokens(Tensor({n_regions, dv}, std::move(features)));
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
    int size = 0;
    int max_regions = 0;
    int max_len = 0;
    int feature_dim = 0;

    // Row-major [size x max_regions x feature_dim]; padded regions are zero.
    std::vector<double> features;
    std::vector<BoolVec> region_mask;            // per example, length max_regions
    std::vector<std::vector<RelationEdge>> edges;
    std::vector<std::vector<int>> token_ids;     // per example, length max_len (padded with <pad>)
    std::vector<BoolVec> token_mask;             // per example, length max_len
    std::vector<std::string> ids;

    // Extra per-task payloads.
    std::vector<int> answers;                       // vqa
    std::vector<std::vector<std::vector<int>>> choices;  // vcr: 4 id lists per example
    std::vector<int> correct_choice;                 // vcr

    int true_regions(int b) const {
        int n = 0;
        for (std::uint8_t m : region_mask[static_cast<std::size_t>(b)]) n += m;
        return n;
    }

    int true_length(int b) const {
        int n = 0;
        for (std::uint8_t m : token_mask[static_cast<std::size_t>(b)]) n += m;
        return n;
    }

    // Unpadded feature matrix of one example.
    Tensor example_features(int b) const {
        const int n = true_regions(b);
        std::vector<double> vals(static_cast<std::size_t>(n) * feature_dim);
        const double* src = &features[static_cast<std::size_t>(b) * max_regions * feature_dim];
        std::copy(src, src + static_cast<std::size_t>(n) * feature_dim, vals.begin());
        return Tensor({n, feature_dim}, std::move(vals));
    }

    // Unpadded token ids of one example.
    std::vector<int> example_ids(int b) const {
        const int n = true_length(b);
        const auto& row = token_ids[static_cast<std::size_t>(b)];
        return std::vector<int>(row.begin(), row.begin() + n);
    }
};

struct CollateItem {
    const VisualTokens* visual = nullptr;
    TokenSequence tokens;
    std::string id;
};

// Pads text to the batch max length and regions to the batch max region
// count; order is preserved.
inline Batch collate(const std::vector<CollateItem>& items, int pad_id = kPadId) {
    if (items.empty()) throw UsageError("collate requires a nonempty example list");
    Batch batch;
    batch.size = static_cast<int>(items.size());
    batch.feature_dim = items[0].visual ? items[0].visual->feature_dim() : 0;
    for (const CollateItem& it : items) {
        if (it.visual) {
            if (batch.feature_dim == 0) batch.feature_dim = it.visual->feature_dim();
            if (it.visual->feature_dim() != batch.feature_dim) {
                throw ShapeError("collate: inconsistent feature dims " + std::to_string(batch.feature_dim) +
                                 " vs " + std::to_string(it.visual->feature_dim()));
            }
            batch.max_regions = std::max(batch.max_regions, it.visual->num_regions());
        }
        batch.max_len = std::max(batch.max_len, it.tokens.length());
    }
    batch.features.assign(static_cast<std::size_t>(batch.size) * batch.max_regions * batch.feature_dim, 0.0);
    for (int b = 0; b < batch.size; ++b) {
        const CollateItem& it = items[static_cast<std::size_t>(b)];
        BoolVec rmask(static_cast<std::size_t>(batch.max_regions), 0);
        if (it.visual) {
            const int n = it.visual->num_regions();
            for (int r = 0; r < n; ++r) rmask[static_cast<std::size_t>(r)] = 1;
            std::copy(it.visual->features.values().begin(), it.visual->features.values().end(),
                      batch.features.begin() + static_cast<std::size_t>(b) * batch.max_regions * batch.feature_dim);
            batch.edges.push_back(it.visual->edges);
        } else {
            batch.edges.emplace_back();
        }
        batch.region_mask.push_back(std::move(rmask));

        std::vector<int> ids(static_cast<std::size_t>(batch.max_len), pad_id);
        BoolVec tmask(static_cast<std::size_t>(batch.max_len), 0);
        for (int t = 0; t < it.tokens.length(); ++t) {
            ids[static_cast<std::size_t>(t)] = it.tokens.ids[static_cast<std::size_t>(t)];
            tmask[static_cast<std::size_t>(t)] = 1;
        }
        batch.token_ids.push_back(std::move(ids));
        batch.token_mask.push_back(std::move(tmask));
        batch.ids.push_back(it.id);
    }
    return batch;
}

}  // namespace xmodal
