// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints: every named parameter as an f32 XTNS entry plus a "__meta__"
// entry carrying (model hash, seed, step). Loads verify the hash before any
// value lands in a parameter.

#pragma once

#include <string>
#include <vector>

#include "xmodal/pipeline.hpp"
#include "xmodal/xtns.hpp"

namespace xmodal {

inline constexpr const char* kCheckpointMetaName = "__meta__";

inline std::vector<XtnsEntry> checkpoint_entries(const Pipeline& p, long long step) {
    std::vector<XtnsEntry> entries;
    XtnsEntry meta;
    meta.name = kCheckpointMetaName;
    meta.dtype = 1;
    meta.dims = {3};
    meta.i64 = {static_cast<std::int64_t>(p.model_hash), static_cast<std::int64_t>(p.seed), step};
    entries.push_back(std::move(meta));
    for (const auto& [name, tensor] : p.params.all()) {
        XtnsEntry e;
        e.name = name;
        e.dtype = 0;
        for (int d : tensor.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
        e.f32.reserve(tensor.size());
        for (double x : tensor.values()) e.f32.push_back(static_cast<float>(x));
        entries.push_back(std::move(e));
    }
    return entries;
}

inline void save_checkpoint(const Pipeline& p, const std::string& path, long long step) {
    xtns_write_file(path, checkpoint_entries(p, step));
}

// Returns the step count stored in the checkpoint.
inline long long load_checkpoint(Pipeline& p, const std::string& path) {
    std::vector<XtnsEntry> entries = xtns_read_file(path);
    const XtnsEntry* meta = xtns_find(entries, kCheckpointMetaName);
    if (!meta || meta->dtype != 1 || meta->i64.size() != 3) {
        throw FormatError("checkpoint " + path + " has no usable " + kCheckpointMetaName + " entry");
    }
    if (static_cast<std::uint64_t>(meta->i64[0]) != p.model_hash) {
        throw ConfigError("checkpoint " + path + " was written for a different model configuration "
                          "(config hash mismatch)");
    }
    for (const auto& [name, tensor] : p.params.all()) {
        const XtnsEntry* e = xtns_find(entries, name);
        if (!e) throw FormatError("checkpoint " + path + " is missing parameter '" + name + "'");
        if (e->dtype != 0 || e->numel() != tensor.size()) {
            throw FormatError("checkpoint entry '" + name + "' has the wrong shape");
        }
        Tensor t = tensor;
        for (std::size_t i = 0; i < e->f32.size(); ++i) {
            t.values_mut()[i] = static_cast<double>(e->f32[i]);
        }
    }
    p.trained_steps = meta->i64[2];
    return meta->i64[2];
}

}  // namespace xmodal
