#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "rforge/rng.hpp"
#include "rforge/tensor.hpp"

namespace rforge {

using TokenId = std::uint32_t;
inline constexpr TokenId kPadId = 0;

/// Parameters of the single-layer attention encoder.
struct EncoderParams {
    Tensor embedding;   // [V, d]
    Tensor mix_weight;  // [d, 2d]
    Tensor mix_bias;    // [d]

    std::size_t vocab_size() const { return embedding.dim(0); }
    std::size_t hidden_dim() const { return embedding.dim(1); }

    /// Small uniform init; PAD row starts at zero.
    static EncoderParams init(std::size_t vocab_size, std::size_t hidden_dim, Rng& rng);
};

struct Encoding {
    Tensor states;  // [n, d]
    Tensor pooled;  // [d]
};

/// Contextual token states and a mean-pooled document vector.
///
/// Each embedding row is scaled by the matching soft-mask entry, then passed
/// through one scaled dot-product attention step whose keys exclude PAD. The
/// state of token i is tanh(mix_weight [e_i ; c_i] + mix_bias); pooling
/// averages the states of non-PAD positions.
Encoding encode(const EncoderParams& params, std::span<const TokenId> tokens,
                const std::optional<Tensor>& soft_mask = std::nullopt);

/// Number of leading non-PAD positions (PAD only ever appears as a suffix).
std::size_t content_length(std::span<const TokenId> tokens);

} // namespace rforge
