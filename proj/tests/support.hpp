#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rforge/corpus.hpp"
#include "rforge/rationalizer.hpp"
#include "rforge/tensor.hpp"

namespace rforge::testing {

/// Relative L2 error between analytic and central-difference gradients.
struct GradCheck {
    double worst = 0.0;
    std::string worst_leaf;
};

/// Runs `loss` once with recording to obtain analytic gradients of `leaves`,
/// then compares each entry against (f(x+h) - f(x-h)) / 2h.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, const std::vector<std::pair<std::string, Tensor>>& leaves,
                                 double step = 1e-5) {
    for (const auto& [name, leaf] : leaves) {
        Tensor t = leaf;
        t.zero_grad();
    }
    backward(loss());
    GradCheck out;
    for (const auto& [name, leaf] : leaves) {
        Tensor t = leaf;
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) {
            analytic.assign(t.grad().begin(), t.grad().end());
        }
        std::vector<double> numeric(t.numel(), 0.0);
        {
            NoGradGuard guard;
            auto values = t.mutable_data();
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double saved = values[i];
                values[i] = saved + step;
                const double up = loss().item();
                values[i] = saved - step;
                const double down = loss().item();
                values[i] = saved;
                numeric[i] = (up - down) / (2.0 * step);
            }
        }
        double diff = 0.0, norm = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            norm += numeric[i] * numeric[i];
        }
        const double rel = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-8);
        if (rel > out.worst) {
            out.worst = rel;
            out.worst_leaf = name;
        }
        t.zero_grad();
    }
    return out;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
        v = dist(rng);
    }
    return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

/// Every physical tensor of a bundle, optionally skipping groups.
inline std::vector<std::pair<std::string, Tensor>> bundle_leaves(const ModelBundle& bundle,
                                                                 const std::vector<std::string>& skip_groups = {}) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, tensor] : bundle.parameters()) {
        const std::string group = name.substr(0, name.find('.'));
        if (std::find(skip_groups.begin(), skip_groups.end(), group) == skip_groups.end()) {
            out.emplace_back(name, tensor);
        }
    }
    return out;
}

/// Small bundle whose parameters are spread wide enough to give nontrivial gradients.
inline ModelBundle tiny_bundle(std::uint64_t seed = 3, std::size_t vocab = 8, std::size_t hidden = 3,
                               std::size_t classes = 2, bool share_imitator_head = true) {
    ModelBundle bundle = ModelBundle::create({vocab, hidden, classes}, seed, share_imitator_head);
    Rng rng(seed * 7919 + 1);
    std::uniform_real_distribution<double> dist(-0.9, 0.9);
    for (const auto& [name, tensor] : bundle.parameters()) {
        Tensor t = tensor;
        for (auto& v : t.mutable_data()) {
            v = dist(rng);
        }
    }
    return bundle;
}

inline Document make_doc(std::string id, std::vector<TokenId> tokens, std::size_t label, Mask gold,
                         Split split = Split::kSup) {
    Document doc;
    doc.id = std::move(id);
    doc.tokens = std::move(tokens);
    doc.label = label;
    doc.gold_mask = std::move(gold);
    doc.split = split;
    return doc;
}

} // namespace rforge::testing
