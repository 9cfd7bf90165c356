// SPDX-License-Identifier: Apache-2.0
//
// Named parameter store. Each parameter is initialized from a splitmix64
// stream keyed by (global seed, name hash), so values are independent of
// construction order. Values are kept on the f32 grid: checkpoints store
// single precision and save/load must restore bit-identical forwards.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "xmodal/error.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

inline void snap_to_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Matrix parameter, uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    Tensor matrix(const std::string& name, int rows, int cols) {
        return get_or_create(name, {rows, cols}, [&](Rng& rng, std::vector<double>& v) {
            const double a = std::sqrt(6.0 / (rows + cols));
            for (double& x : v) x = rng.uniform(-a, a);
        });
    }

    // Bias vector, zeros.
    Tensor bias(const std::string& name, int n) {
        return get_or_create(name, {n}, [](Rng&, std::vector<double>&) {});
    }

    // Norm gain vector, ones.
    Tensor gain(const std::string& name, int n) {
        return get_or_create(name, {n}, [](Rng&, std::vector<double>& v) {
            for (double& x : v) x = 1.0;
        });
    }

    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    Tensor at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
        return it->second;
    }

    const std::map<std::string, Tensor>& all() const { return params_; }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(t);
        return out;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(name);
        return out;
    }

    void zero_grads() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    std::size_t total_entries() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.size();
        return n;
    }

private:
    template <typename Init>
    Tensor get_or_create(const std::string& name, std::vector<int> shape, Init init) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            if (it->second.shape() != shape) {
                throw ShapeError("parameter '" + name + "' requested with shape " +
                                 detail::shape_str(shape) + " but exists with " + it->second.shape_str());
            }
            return it->second;
        }
        std::vector<double> v(detail::numel_of(shape), 0.0);
        Rng rng = Rng(seed_).derive(fnv1a64(name));
        init(rng, v);
        snap_to_f32(v);
        Tensor t(std::move(shape), std::move(v), /*requires_grad=*/true);
        params_.emplace(name, t);
        return t;
    }

    std::uint64_t seed_;
    std::map<std::string, Tensor> params_;
};

}  // namespace xmodal
