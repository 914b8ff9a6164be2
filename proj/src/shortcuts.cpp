#include "rforge/shortcuts.hpp"

#include <cmath>

#include "rforge/errors.hpp"

namespace rforge {

namespace {

EncoderParams detached(const EncoderParams& p) {
    return EncoderParams{p.embedding.detach(), p.mix_weight.detach(), p.mix_bias.detach()};
}

void log_term(LossLog* log, const char* name, const Tensor& value) {
    if (log != nullptr) {
        (*log)[name] += value.item();
    }
}

Tensor zero() { return Tensor::scalar(0.0); }

} // namespace

std::vector<ShortcutSpan> discover(std::span<const std::uint8_t> pred_mask, std::span<const std::uint8_t> gold_mask,
                                   const std::string& doc_id) {
    if (pred_mask.size() != gold_mask.size()) {
        throw ContractError("discover: predicted mask has " + std::to_string(pred_mask.size()) +
                            " entries but gold mask has " + std::to_string(gold_mask.size()));
    }
    std::vector<ShortcutSpan> spans;
    const std::size_t n = pred_mask.size();
    std::size_t i = 0;
    while (i < n) {
        if (!(pred_mask[i] && !gold_mask[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && pred_mask[j] && !gold_mask[j]) {
            ++j;
        }
        if (j - i >= kMinShortcutRun) {
            spans.push_back({doc_id, i, j});
        }
        i = j;
    }
    return spans;
}

std::size_t discover_corpus(const ModelBundle& unsupervised_model, std::span<Document> supervised_docs) {
    NoGradGuard no_grad;
    std::size_t total = 0;
    for (Document& doc : supervised_docs) {
        if (!doc.gold_mask) {
            throw PreconditionError("discover: document '" + doc.id + "' has no gold rationale");
        }
        const SelectionResult sel = select_eval(unsupervised_model, doc.tokens);
        doc.cached_spans = discover(sel.hard_mask, *doc.gold_mask, doc.id);
        total += doc.cached_spans->size();
    }
    return total;
}

Tensor shortcut_mask(std::size_t length, std::span<const ShortcutSpan> spans) {
    std::vector<double> mask(length, 0.0);
    for (const auto& span : spans) {
        if (span.start > span.end || span.end > length) {
            throw ContractError("shortcut_mask: span [" + std::to_string(span.start) + "," + std::to_string(span.end) +
                                ") out of range for length " + std::to_string(length));
        }
        for (std::size_t i = span.start; i < span.end; ++i) {
            mask[i] = 1.0;
        }
    }
    return Tensor::vector(std::move(mask));
}

Tensor uniform_kl(const Tensor& class_probs) {
    const double n = static_cast<double>(class_probs.numel());
    return add_scalar(scale(mean(log(class_probs)), -1.0), -std::log(n));
}

Tensor loss_unif(const ModelBundle& bundle, const Document& doc, std::span<const ShortcutSpan> spans) {
    if (spans.empty()) {
        return zero();
    }
    const Tensor q = predict(bundle, doc.tokens, shortcut_mask(doc.tokens.size(), spans));
    return uniform_kl(q);
}

Tensor loss_s(const ModelBundle& bundle, const Document& doc, std::span<const ShortcutSpan> spans) {
    if (spans.empty()) {
        return zero();
    }
    const Tensor q = classify(bundle.encoder(EncoderRole::kShortcut), bundle.head(HeadRole::kShortcut), doc.tokens,
                              shortcut_mask(doc.tokens.size(), spans));
    return loss_un_task(q, doc.label);
}

Tensor loss_virt(const ModelBundle& bundle, const Document& doc, std::span<const ShortcutSpan> spans) {
    if (spans.empty()) {
        return zero();
    }
    const Tensor shortcut_repr =
        encode(bundle.encoder(EncoderRole::kShortcut), doc.tokens, shortcut_mask(doc.tokens.size(), spans)).pooled;
    const Tensor imitated = encode(bundle.encoder(EncoderRole::kImitator), doc.tokens).pooled;
    return squared_distance(shortcut_repr, imitated);
}

Tensor loss_diff(const ModelBundle& bundle, const Document& doc) {
    const Tensor virtual_repr = encode(detached(bundle.encoder(EncoderRole::kImitator)), doc.tokens).pooled;
    const std::size_t d = bundle.dims().hidden_dim;
    const Tensor head = bundle.head(HeadRole::kImitator);
    const Tensor q = reshape(softmax(matmul_bt(reshape(virtual_repr, {1, d}), head)), {head.dim(0)});
    return uniform_kl(q);
}

std::span<const ShortcutSpan> spans_of(const Document& doc) {
    if (!doc.cached_spans) {
        throw PreconditionError("document '" + doc.id + "' has no cached shortcut spans; run discover first");
    }
    return *doc.cached_spans;
}

Tensor ssr_unif_supervised_loss(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                                LossLog* log) {
    const auto spans = spans_of(doc);
    const Tensor base = loss_sup(bundle, doc, weights, log);
    const Tensor unif = loss_unif(bundle, doc, spans);
    log_term(log, "unif", unif);
    return add(base, scale(unif, weights.lambda_unif));
}

Tensor ssr_virt_supervised_loss(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                                LossLog* log) {
    const auto spans = spans_of(doc);
    const Tensor base = loss_sup(bundle, doc, weights, log);
    const Tensor shortcut = loss_s(bundle, doc, spans);
    const Tensor virt = loss_virt(bundle, doc, spans);
    log_term(log, "shortcut", shortcut);
    log_term(log, "virt", virt);
    return add(add(base, shortcut), scale(virt, weights.lambda_virt));
}

Tensor ssr_virt_unsupervised_loss(const ModelBundle& bundle, const Document& doc, const LossWeights& weights,
                                  Rng& rng, LossLog* log) {
    const Tensor base = loss_un(bundle, doc, weights, rng, log);
    const Tensor diff = loss_diff(bundle, doc);
    log_term(log, "diff", diff);
    return add(base, scale(diff, weights.lambda_diff));
}

Tensor loss_ssr_unif_step(const ModelBundle& bundle, std::span<const Document> sup_batch,
                          std::span<const Document> un_batch, const LossWeights& weights, Rng& rng) {
    Tensor total = zero();
    for (const auto& doc : sup_batch) {
        total = add(total, ssr_unif_supervised_loss(bundle, doc, weights));
    }
    for (const auto& doc : un_batch) {
        total = add(total, loss_un(bundle, doc, weights, rng));
    }
    return total;
}

Tensor loss_ssr_virt_step(const ModelBundle& bundle, std::span<const Document> sup_batch,
                          std::span<const Document> un_batch, const LossWeights& weights, Rng& rng) {
    Tensor total = zero();
    for (const auto& doc : sup_batch) {
        total = add(total, ssr_virt_supervised_loss(bundle, doc, weights));
    }
    for (const auto& doc : un_batch) {
        total = add(total, ssr_virt_unsupervised_loss(bundle, doc, weights, rng));
    }
    return total;
}

} // namespace rforge
