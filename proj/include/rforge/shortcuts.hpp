#pragma once

#include <span>
#include <string>
#include <vector>

#include "rforge/document.hpp"
#include "rforge/rationalizer.hpp"

namespace rforge {

/// Minimum run of potential shortcut tokens that counts as a shortcut.
inline constexpr std::size_t kMinShortcutRun = 3;

/// Potential shortcut tokens are predicted-but-not-gold positions; returns
/// their maximal runs of length >= kMinShortcutRun.
std::vector<ShortcutSpan> discover(std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> gold_mask,
                                   const std::string& doc_id = {});

/// Runs the trained unsupervised model over every supervised document and
/// caches the discovered spans on it. Returns the total span count.
std::size_t discover_corpus(const ModelBundle& unsupervised_model, std::span<Document> supervised_docs);

/// 1 on span positions, 0 elsewhere.
Tensor shortcut_mask(std::size_t length, std::span<const ShortcutSpan> spans);

/// KL(uniform || q) for a class distribution q.
Tensor uniform_kl(const Tensor& class_probs);

/// Predictor on the shortcut-only view pushed toward uniform. Zero when there are no spans.
Tensor loss_unif(const ModelBundle& bundle, const Document& doc, std::span<const ShortcutSpan> spans);

/// Cross-entropy of the external shortcut predictor on the shortcut-only view.
Tensor loss_s(const ModelBundle& bundle, const Document& doc, std::span<const ShortcutSpan> spans);

/// Squared distance between the shortcut representation and the imitator's
/// representation of the full input. Both roles share one physical encoder.
Tensor loss_virt(const ModelBundle& bundle, const Document& doc, std::span<const ShortcutSpan> spans);

/// KL(uniform || softmax(imitator_head * imitator(x))) with the imitator encoder
/// held frozen: gradients reach the head only.
Tensor loss_diff(const ModelBundle& bundle, const Document& doc);

/// Cached spans of a supervised document; throws PreconditionError when discovery has not run.
std::span<const ShortcutSpan> spans_of(const Document& doc);

Tensor ssr_unif_supervised_loss(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                                LossLog* log = nullptr);
Tensor ssr_virt_supervised_loss(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                                LossLog* log = nullptr);
Tensor ssr_virt_unsupervised_loss(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                                  Rng& rng, LossLog* log = nullptr);

/// Sum over a supervised micro-batch and an unsupervised micro-batch of the
/// per-document strategy losses.
Tensor loss_ssr_unif_step(const ModelBundle& bundle, std::span<const Document> sup_batch,
                          std::span<const Document> un_batch, const LossWeights& weights, Rng& rng);
Tensor loss_ssr_virt_step(const ModelBundle& bundle, std::span<const Document> sup_batch,
                          std::span<const Document> un_batch, const LossWeights& weights, Rng& rng);

} // namespace rforge
