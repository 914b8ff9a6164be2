#include "rforge/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_set>

#include "rforge/errors.hpp"

namespace rforge {

namespace {

std::vector<double> to_row(const Tensor& matrix, std::size_t r) {
    const std::size_t d = matrix.dim(1);
    const auto data = matrix.data();
    return {data.begin() + static_cast<std::ptrdiff_t>(r * d), data.begin() + static_cast<std::ptrdiff_t>((r + 1) * d)};
}

void check_spans(const Document& doc, std::span<const ShortcutSpan> spans) {
    for (const auto& s : spans) {
        if (s.start > s.end || s.end > doc.tokens.size()) {
            throw ContractError("augment: span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                                ") out of range for document '" + doc.id + "'");
        }
    }
}

std::unordered_set<TokenId> gold_tokens(const Document& doc) {
    std::unordered_set<TokenId> out;
    if (doc.gold_mask) {
        for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
            if ((*doc.gold_mask)[i]) {
                out.insert(doc.tokens[i]);
            }
        }
    }
    return out;
}

Document as_augmented(const Document& source, const char* tag, const char* suffix) {
    Document out = source;
    out.id = source.id + suffix;
    out.split = Split::kSup;
    out.augmented = tag;
    out.cached_spans = std::vector<ShortcutSpan>{};
    return out;
}

} // namespace

VectorDatastore::VectorDatastore(std::vector<Entry> entries) : m_entries(std::move(entries)) {
    if (!m_entries.empty()) {
        m_dim = m_entries.front().key.size();
    }
    for (const auto& e : m_entries) {
        if (e.key.size() != m_dim) {
            throw DimensionError("VectorDatastore: keys of dimension " + std::to_string(e.key.size()) + " and " +
                                 std::to_string(m_dim));
        }
    }
}

std::size_t nn_query(const VectorDatastore& store, std::span<const double> query, const PayloadFilter& exclude) {
    if (!store.empty() && query.size() != store.dim()) {
        throw DimensionError("nn_query: query of dimension " + std::to_string(query.size()) + " vs store dimension " +
                             std::to_string(store.dim()));
    }
    double best = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> found;
    for (const auto& e : store.entries()) {
        if (exclude && exclude(e.payload)) {
            continue;
        }
        double dist = 0.0;
        for (std::size_t k = 0; k < query.size(); ++k) {
            const double diff = e.key[k] - query[k];
            dist += diff * diff;
        }
        if (!found || dist < best) {
            best = dist;
            found = e.payload;
        }
    }
    if (!found) {
        throw RetrievalExhaustedError("nn_query: every datastore entry was excluded");
    }
    return *found;
}

std::vector<TokenId> token_pool(std::span<const Document> docs) {
    std::set<TokenId> seen;
    for (const auto& doc : docs) {
        for (TokenId t : doc.tokens) {
            if (t != kPadId) {
                seen.insert(t);
            }
        }
    }
    return {seen.begin(), seen.end()};
}

Document random_da(const Document& doc, std::span<const ShortcutSpan> spans, std::span<const TokenId> pool,
                   Rng& rng) {
    if (pool.empty()) {
        throw ContractError("random_da: token pool is empty");
    }
    check_spans(doc, spans);
    Document out = doc;
    for (const auto& s : spans) {
        for (std::size_t i = s.start; i < s.end; ++i) {
            out.tokens[i] = pool[uniform_index(rng, pool.size())];
        }
    }
    return out;
}

SemanticAugmenter::SemanticAugmenter(EncoderParams encoder, std::span<const Document> supervised_docs)
    : m_encoder(std::move(encoder)), m_docs(supervised_docs.begin(), supervised_docs.end()) {
    NoGradGuard no_grad;
    std::vector<VectorDatastore::Entry> entries;
    entries.reserve(m_docs.size());
    for (std::size_t i = 0; i < m_docs.size(); ++i) {
        const Tensor pooled = encode(m_encoder, m_docs[i].tokens).pooled;
        entries.push_back({pooled.to_vector(), i});
    }
    m_global = VectorDatastore(std::move(entries));
}

std::size_t SemanticAugmenter::neighbor_of(const Document& doc) const {
    NoGradGuard no_grad;
    const Tensor pooled = encode(m_encoder, doc.tokens).pooled;
    return nn_query(m_global, pooled.data(), [&](std::size_t p) { return m_docs[p].id == doc.id; });
}

Document SemanticAugmenter::augment(const Document& doc, std::span<const ShortcutSpan> spans,
                                    std::span<const TokenId> fallback_pool, Rng& rng) const {
    check_spans(doc, spans);
    if (spans.empty()) {
        return doc;
    }
    NoGradGuard no_grad;
    const Document& neighbor = m_docs[neighbor_of(doc)];
    const Tensor local_states = encode(m_encoder, neighbor.tokens).states;
    std::vector<VectorDatastore::Entry> entries;
    for (std::size_t j = 0; j < neighbor.tokens.size(); ++j) {
        entries.push_back({to_row(local_states, j), neighbor.tokens[j]});
    }
    const VectorDatastore local(std::move(entries));

    std::unordered_set<TokenId> banned = gold_tokens(doc);
    banned.merge(gold_tokens(neighbor));
    const auto exclude = [&](std::size_t token) {
        return token == kPadId || banned.count(static_cast<TokenId>(token)) != 0;
    };

    const Tensor states = encode(m_encoder, doc.tokens).states;
    Document out = doc;
    for (const auto& s : spans) {
        for (std::size_t i = s.start; i < s.end; ++i) {
            try {
                out.tokens[i] = static_cast<TokenId>(nn_query(local, to_row(states, i), exclude));
            } catch (const RetrievalExhaustedError&) {
                if (fallback_pool.empty()) {
                    throw;
                }
                out.tokens[i] = fallback_pool[uniform_index(rng, fallback_pool.size())];
                ++m_fallbacks;
            }
        }
    }
    return out;
}

std::string_view augment_mode_name(AugmentMode mode) {
    switch (mode) {
    case AugmentMode::kNone:
        return "none";
    case AugmentMode::kRandom:
        return "random";
    case AugmentMode::kSemantic:
        return "semantic";
    case AugmentMode::kMixed:
        return "mixed";
    }
    throw ContractError("augment_mode_name: unknown mode");
}

AugmentMode parse_augment_mode(std::string_view name) {
    for (auto mode : {AugmentMode::kNone, AugmentMode::kRandom, AugmentMode::kSemantic, AugmentMode::kMixed}) {
        if (augment_mode_name(mode) == name) {
            return mode;
        }
    }
    throw ValidationError("unknown augmentation mode '" + std::string(name) + "' (none|random|semantic|mixed)");
}

std::vector<Document> augment_corpus(std::span<const Document> supervised_docs, AugmentMode mode, double fraction,
                                     std::span<const TokenId> pool, const SemanticAugmenter* semantic, Rng& rng,
                                     AugmentSummary* summary) {
    if (fraction < 0.0 || fraction > 1.0) {
        throw SpecError("augment: fraction must lie in [0,1]");
    }
    std::vector<Document> out;
    if (mode == AugmentMode::kNone) {
        return out;
    }
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(supervised_docs.size())));
    if (k == 0) {
        return out;
    }
    const bool needs_semantic = mode == AugmentMode::kSemantic || mode == AugmentMode::kMixed;
    if (needs_semantic && semantic == nullptr) {
        throw ContractError("augment: semantic augmentation requested without an augmenter");
    }

    std::vector<std::size_t> with_spans, without_spans;
    for (std::size_t i = 0; i < supervised_docs.size(); ++i) {
        const auto& spans = supervised_docs[i].cached_spans;
        (spans && !spans->empty() ? with_spans : without_spans).push_back(i);
    }
    std::shuffle(with_spans.begin(), with_spans.end(), rng);
    std::shuffle(without_spans.begin(), without_spans.end(), rng);
    std::vector<std::size_t> chosen = with_spans;
    chosen.insert(chosen.end(), without_spans.begin(), without_spans.end());
    chosen.resize(k);

    std::size_t random_count = 0;
    switch (mode) {
    case AugmentMode::kRandom:
        random_count = k;
        break;
    case AugmentMode::kSemantic:
        random_count = 0;
        break;
    default:
        random_count = (k + 1) / 2;
        break;
    }

    AugmentSummary local;
    const std::size_t fallbacks_before = semantic != nullptr ? semantic->fallbacks() : 0;
    for (std::size_t r = 0; r < k; ++r) {
        const Document& source = supervised_docs[chosen[r]];
        const std::vector<ShortcutSpan> spans = source.cached_spans.value_or(std::vector<ShortcutSpan>{});
        if (r < random_count) {
            out.push_back(as_augmented(random_da(source, spans, pool, rng), "random", "+rda"));
            ++local.random;
        } else {
            out.push_back(as_augmented(semantic->augment(source, spans, pool, rng), "semantic", "+sda"));
            ++local.semantic;
        }
    }
    if (semantic != nullptr) {
        local.fallback_positions = semantic->fallbacks() - fallbacks_before;
    }
    if (summary != nullptr) {
        *summary = local;
    }
    return out;
}

} // namespace rforge
