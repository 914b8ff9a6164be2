#include "rforge/encoder.hpp"

#include <cmath>

#include "rforge/errors.hpp"

namespace rforge {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.mutable_data()) {
        v = dist(rng);
    }
    return t;
}

} // namespace

EncoderParams EncoderParams::init(std::size_t vocab_size, std::size_t hidden_dim, Rng& rng) {
    if (vocab_size < 2 || hidden_dim == 0) {
        throw SpecError("EncoderParams::init: need vocab_size >= 2 and hidden_dim >= 1");
    }
    EncoderParams p;
    p.embedding = uniform_tensor({vocab_size, hidden_dim}, 1.0, rng);
    auto emb = p.embedding.mutable_data();
    for (std::size_t j = 0; j < hidden_dim; ++j) {
        emb[kPadId * hidden_dim + j] = 0.0;
    }
    p.mix_weight = uniform_tensor({hidden_dim, 2 * hidden_dim}, 1.0 / std::sqrt(2.0 * hidden_dim), rng);
    p.mix_bias = Tensor::zeros({hidden_dim}, true);
    return p;
}

std::size_t content_length(std::span<const TokenId> tokens) {
    std::size_t n = tokens.size();
    while (n > 0 && tokens[n - 1] == kPadId) {
        --n;
    }
    return n;
}

Encoding encode(const EncoderParams& params, std::span<const TokenId> tokens,
                const std::optional<Tensor>& soft_mask) {
    const std::size_t n = tokens.size();
    if (n == 0) {
        throw ContractError("encode: empty token sequence");
    }
    const std::size_t d = params.hidden_dim();
    if (soft_mask && (soft_mask->rank() != 1 || soft_mask->dim(0) != n)) {
        throw DimensionError("encode: soft mask shape " + shape_to_string(soft_mask->shape()) +
                             " does not match " + std::to_string(n) + " tokens");
    }

    std::size_t live = 0;
    std::vector<double> key_bias(n * n, 0.0);
    std::vector<double> pool_row(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (tokens[j] == kPadId) {
            for (std::size_t i = 0; i < n; ++i) {
                key_bias[i * n + j] = -1e9;
            }
        } else {
            ++live;
        }
    }
    if (live == 0) {
        throw ContractError("encode: sequence contains only PAD tokens");
    }
    for (std::size_t j = 0; j < n; ++j) {
        if (tokens[j] != kPadId) {
            pool_row[j] = 1.0 / static_cast<double>(live);
        }
    }

    Tensor embedded = gather_rows(params.embedding, tokens);
    if (soft_mask) {
        embedded = scale_rows(embedded, *soft_mask);
    }
    const Tensor logits = add(scale(matmul_bt(embedded, embedded), 1.0 / std::sqrt(static_cast<double>(d))),
                              Tensor::from({n, n}, std::move(key_bias)));
    const Tensor context = matmul(softmax(logits), embedded);
    const Tensor mixed = add_rowwise(matmul_bt(concat_cols(embedded, context), params.mix_weight), params.mix_bias);
    Encoding out;
    out.states = tanh(mixed);
    out.pooled = reshape(matmul(Tensor::from({1, n}, std::move(pool_row)), out.states), {d});
    return out;
}

} // namespace rforge
