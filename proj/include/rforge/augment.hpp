#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rforge/document.hpp"
#include "rforge/encoder.hpp"
#include "rforge/rng.hpp"

namespace rforge {

/// Immutable table of (key vector, payload) pairs with exact L2 lookup.
class VectorDatastore {
public:
    struct Entry {
        std::vector<double> key;
        std::size_t payload = 0;
    };

    VectorDatastore() = default;
    explicit VectorDatastore(std::vector<Entry> entries);

    std::size_t size() const noexcept { return m_entries.size(); }
    bool empty() const noexcept { return m_entries.empty(); }
    std::size_t dim() const noexcept { return m_dim; }
    const std::vector<Entry>& entries() const noexcept { return m_entries; }

private:
    std::vector<Entry> m_entries;
    std::size_t m_dim = 0;
};

using PayloadFilter = std::function<bool(std::size_t payload)>;

/// Payload of the entry closest to `query` in squared L2 among entries the
/// filter does not exclude; ties go to the lowest entry index.
std::size_t nn_query(const VectorDatastore& store, std::span<const double> query,
                     const PayloadFilter& exclude = nullptr);

/// Sorted distinct non-PAD token ids occurring in the given documents.
std::vector<TokenId> token_pool(std::span<const Document> docs);

/// Replaces every span position with a uniformly drawn pool token.
Document random_da(const Document& doc, std::span<const ShortcutSpan> spans, std::span<const TokenId> pool,
                   Rng& rng);

/// Retrieval-grounded replacement using the unsupervised model's predictor encoder.
class SemanticAugmenter {
public:
    /// Global store: pooled representation of each supervised document.
    SemanticAugmenter(EncoderParams encoder, std::span<const Document> supervised_docs);

    /// Index into the supervised documents of x's nearest other document.
    std::size_t neighbor_of(const Document& doc) const;

    /// Each span position gets the token of the neighbor whose state is
    /// nearest the position's own state, skipping PAD and gold tokens of
    /// either document. Positions with no admissible candidate draw from
    /// `fallback_pool` instead.
    Document augment(const Document& doc, std::span<const ShortcutSpan> spans, std::span<const TokenId> fallback_pool,
                     Rng& rng) const;

    const VectorDatastore& global_store() const noexcept { return m_global; }

    /// Number of positions that fell back to random replacement so far.
    std::size_t fallbacks() const noexcept { return m_fallbacks; }

private:
    EncoderParams m_encoder;
    std::vector<Document> m_docs;
    VectorDatastore m_global;
    mutable std::size_t m_fallbacks = 0;
};

enum class AugmentMode { kNone, kRandom, kSemantic, kMixed };

std::string_view augment_mode_name(AugmentMode mode);
AugmentMode parse_augment_mode(std::string_view name);

struct AugmentSummary {
    std::size_t random = 0;
    std::size_t semantic = 0;
    std::size_t fallback_positions = 0;
};

/// Augments round(fraction * |sup|) supervised documents (documents with
/// discovered spans are drawn first) and returns only the new documents.
/// Mixed mode sends the first ceil(k/2) through random_da, the rest through
/// the semantic augmenter. New documents join the supervised split with an
/// empty span list.
std::vector<Document> augment_corpus(std::span<const Document> supervised_docs, AugmentMode mode, double fraction,
                                     std::span<const TokenId> pool, const SemanticAugmenter* semantic, Rng& rng,
                                     AugmentSummary* summary = nullptr);

} // namespace rforge
