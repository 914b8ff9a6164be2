#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rforge/rationalizer.hpp"

namespace rforge {

struct AdamWConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
    friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

/// Moment buffers of one physical tensor.
struct AdamSlot {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t steps = 0;

    friend bool operator==(const AdamSlot&, const AdamSlot&) = default;
};

/// AdamW with decoupled weight decay. State is keyed by physical tensor name,
/// so roles aliased onto one tensor share a single slot.
class AdamW {
public:
    explicit AdamW(AdamWConfig config = {});

    /// Updates each named physical tensor once from its accumulated grad, then
    /// zeroes every grad in the bundle.
    void step(ModelBundle& bundle, std::span<const std::string> names);

    const AdamWConfig& config() const noexcept { return m_config; }
    void set_learning_rate(double lr) { m_config.learning_rate = lr; }
    const std::map<std::string, AdamSlot>& state() const noexcept { return m_state; }
    std::map<std::string, AdamSlot>& mutable_state() noexcept { return m_state; }

private:
    AdamWConfig m_config;
    std::map<std::string, AdamSlot> m_state;
};

} // namespace rforge
