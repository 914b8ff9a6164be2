#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rforge/document.hpp"
#include "rforge/encoder.hpp"
#include "rforge/rng.hpp"
#include "rforge/tensor.hpp"

namespace rforge {

struct ModelDims {
    std::size_t vocab_size = 0;
    std::size_t hidden_dim = 32;
    std::size_t num_classes = 2;

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// Logical encoder roles. Selector and predictor roles of both phases resolve
/// to one physical encoder; the shortcut and imitator roles resolve to a
/// second one.
enum class EncoderRole { kSelectorUn, kPredictorUn, kSelectorSup, kPredictorSup, kShortcut, kImitator };

/// Logical linear-head roles.
enum class HeadRole { kSelectorUn, kSelectorSup, kPredictorUn, kPredictorSup, kShortcut, kImitator };

std::string_view role_name(EncoderRole role);
std::string_view role_name(HeadRole role);

/// Every learnable tensor plus the map from logical role to physical group.
///
/// Tensors are handles, so two roles mapped to the same group read and write
/// the same storage. Bundles are move-only; use clone() for an independent copy.
class ModelBundle {
public:
    static ModelBundle create(const ModelDims& dims, std::uint64_t seed, bool share_imitator_head = true);

    /// Rebuilds a bundle from serialized parts. Validates shapes and alias targets.
    static ModelBundle from_parts(const ModelDims& dims, std::map<std::string, Tensor> params,
                                  std::map<std::string, std::string> aliases);

    ModelBundle(ModelBundle&&) = default;
    ModelBundle& operator=(ModelBundle&&) = default;
    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;

    ModelBundle clone() const;

    const ModelDims& dims() const noexcept { return m_dims; }

    EncoderParams encoder(EncoderRole role) const;
    Tensor head(HeadRole role) const;

    /// Physical group a role resolves to, e.g. "encoder" or "predictor_head".
    const std::string& group_of(std::string_view role) const;
    const std::map<std::string, std::string>& aliases() const noexcept { return m_aliases; }

    /// Physical tensors keyed by "<group>.<name>".
    const std::map<std::string, Tensor>& parameters() const noexcept { return m_params; }
    std::vector<std::string> group_tensor_names(std::string_view group) const;
    std::vector<std::string> groups() const;

    bool imitator_head_shared() const;

    bool imitator_frozen() const noexcept { return m_imitator_frozen; }
    void set_imitator_frozen(bool frozen) { m_imitator_frozen = frozen; }

    /// Copies values of every same-named, same-shaped tensor in `source` into this bundle.
    void copy_values_from(const ModelBundle& source, std::span<const std::string> groups);

    void zero_grads();

private:
    ModelBundle() = default;

    ModelDims m_dims;
    std::map<std::string, Tensor> m_params;
    std::map<std::string, std::string> m_aliases;
    bool m_imitator_frozen = false;
};

/// Hyperparameters of every loss term.
struct LossWeights {
    double lambda_sparsity = 1.0;    // lambda1
    double lambda_continuity = 0.0;  // lambda2
    double alpha = 0.2;              // target selected fraction
    double lambda_unif = 0.1;
    double lambda_virt = 0.1;
    double lambda_diff = 0.1;
    double tau = 0.5;
    /// Feed the straight-through hard mask (instead of the relaxed one) to the predictor.
    bool straight_through_predictor = false;

    void validate() const;
};

struct SelectionResult {
    Tensor select_prob;  // [n] probability of the "select" class
    Tensor soft_mask;    // [n]
    Tensor hard;         // [n] straight-through hard mask (train) or constant (eval)
    Mask hard_mask;
};

/// Gumbel(0,1) noise tensor of the given shape.
Tensor sample_gumbel(Shape shape, Rng& rng);

/// Per-token selector distribution [n,2]; column 1 is "select".
Tensor selector_distribution(const EncoderParams& encoder, const Tensor& head, std::span<const TokenId> tokens);

SelectionResult select_train(const ModelBundle& bundle, std::span<const TokenId> tokens, double tau,
                             const Tensor& noise);
SelectionResult select_train(const ModelBundle& bundle, std::span<const TokenId> tokens, double tau, Rng& rng);

/// Deterministic selection. Default rule: select iff probability >= 0.5.
/// With `top_fraction`, the ceil(top_fraction * n) most probable tokens are selected instead.
SelectionResult select_eval(const ModelBundle& bundle, std::span<const TokenId> tokens,
                            std::optional<double> top_fraction = std::nullopt);

/// softmax(head * encode(tokens, mask).pooled).
Tensor classify(const EncoderParams& encoder, const Tensor& head, std::span<const TokenId> tokens,
                const std::optional<Tensor>& soft_mask);

/// Predictor class distribution; unmasked when `soft_mask` is absent.
Tensor predict(const ModelBundle& bundle, std::span<const TokenId> tokens,
               const std::optional<Tensor>& soft_mask = std::nullopt);

Tensor loss_un_task(const Tensor& class_probs, std::size_t label);
/// lambda1 |mean(m) - alpha| + lambda2 sum_i |m_i - m_{i-1}| over the given (non-PAD) entries.
Tensor loss_regularizer(const Tensor& soft_mask, const LossWeights& weights);
/// Two-class token BCE summed over positions.
Tensor loss_select(const Tensor& select_prob, std::span<const std::uint8_t> gold_mask);

/// Running per-term values, keyed by term name.
using LossLog = std::map<std::string, double>;

Tensor loss_un(const ModelBundle& bundle, const Document& doc, const LossWeights& weights, Rng& rng,
               LossLog* log = nullptr);
/// Variant with caller-supplied Gumbel noise of shape [n,2].
Tensor loss_un(const ModelBundle& bundle, const Document& doc, const LossWeights& weights, const Tensor& noise,
               LossLog* log = nullptr);
Tensor loss_sup(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                LossLog* log = nullptr);

/// Non-PAD indicator as a constant tensor.
Tensor content_indicator(std::span<const TokenId> tokens);

} // namespace rforge
