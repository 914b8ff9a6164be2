#include "rforge/optimizer.hpp"

#include <cmath>

#include "rforge/errors.hpp"

namespace rforge {

void AdamWConfig::validate() const {
    if (!(learning_rate > 0.0)) {
        throw SpecError("optimizer: learning rate must be positive");
    }
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw SpecError("optimizer: betas must lie in [0,1)");
    }
    if (!(epsilon > 0.0) || weight_decay < 0.0) {
        throw SpecError("optimizer: epsilon must be positive and weight decay non-negative");
    }
}

AdamW::AdamW(AdamWConfig config) : m_config(config) { m_config.validate(); }

void AdamW::step(ModelBundle& bundle, std::span<const std::string> names) {
    const auto& params = bundle.parameters();
    for (const auto& name : names) {
        auto it = params.find(name);
        if (it == params.end()) {
            throw ContractError("optimizer: unknown parameter '" + name + "'");
        }
        if (!it->second.has_grad()) {
            throw ContractError("optimizer: parameter '" + name + "' has no gradient; run backward first");
        }
    }

    const AdamWConfig& c = m_config;
    for (const auto& name : names) {
        Tensor w = params.at(name);
        const auto g = w.grad();
        auto data = w.mutable_data();
        AdamSlot& slot = m_state[name];
        if (slot.m.empty()) {
            slot.m.assign(data.size(), 0.0);
            slot.v.assign(data.size(), 0.0);
        }
        ++slot.steps;
        const double correct1 = 1.0 - std::pow(c.beta1, static_cast<double>(slot.steps));
        const double correct2 = 1.0 - std::pow(c.beta2, static_cast<double>(slot.steps));
        for (std::size_t i = 0; i < data.size(); ++i) {
            slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g[i];
            slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = slot.m[i] / correct1;
            const double v_hat = slot.v[i] / correct2;
            const double old = data[i];
            data[i] = old - c.learning_rate * (m_hat / (std::sqrt(v_hat) + c.epsilon)) -
                      c.learning_rate * c.weight_decay * old;
        }
    }
    bundle.zero_grads();
}

} // namespace rforge
