// SPDX-License-Identifier: Apache-2.0
//
// Stage-keyed plugin registry. Factories take a build context and return a
// module instance; the pipeline builder downcasts per stage.

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

struct BuildContext;  // defined in pipeline.hpp

// Common base for everything a factory can produce.
struct Module {
    virtual ~Module() = default;
};

class ModuleRegistry {
public:
    using Factory = std::function<std::shared_ptr<Module>(BuildContext&)>;

    void register_module(const std::string& stage, const std::string& name, Factory factory) {
        auto key = std::make_pair(stage, name);
        if (entries_.count(key)) {
            throw RegistryError("duplicate registration for (" + stage + ", " + name + ")");
        }
        entries_[key] = std::move(factory);
    }

    bool contains(const std::string& stage, const std::string& name) const {
        return entries_.count({stage, name}) > 0;
    }

    const Factory& lookup(const std::string& stage, const std::string& name) const {
        auto it = entries_.find({stage, name});
        if (it == entries_.end()) {
            std::string avail;
            for (const std::string& n : names(stage)) {
                if (!avail.empty()) avail += ", ";
                avail += n;
            }
            throw RegistryError("no module '" + name + "' registered for stage '" + stage +
                                "' (available: " + (avail.empty() ? "<none>" : avail) + ")");
        }
        return it->second;
    }

    std::vector<std::string> names(const std::string& stage) const {
        std::vector<std::string> out;
        for (const auto& [key, factory] : entries_) {
            if (key.first == stage) out.push_back(key.second);
        }
        return out;
    }

private:
    std::map<std::pair<std::string, std::string>, Factory> entries_;
};

}  // namespace xmodal
