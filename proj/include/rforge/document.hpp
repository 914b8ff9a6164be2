#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rforge/encoder.hpp"

namespace rforge {

using Mask = std::vector<std::uint8_t>;

enum class Split { kUn, kSup, kTest, kOodTest };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Half-open token range [start, end) flagged as a potential shortcut.
struct ShortcutSpan {
    std::string doc_id;
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - start; }
    friend bool operator==(const ShortcutSpan&, const ShortcutSpan&) = default;
};

struct Document {
    std::string id;
    std::vector<TokenId> tokens;
    std::size_t label = 0;
    std::optional<Mask> gold_mask;
    Split split = Split::kUn;
    std::optional<std::vector<ShortcutSpan>> cached_spans;
    std::optional<std::string> augmented;

    friend bool operator==(const Document&, const Document&) = default;
};

using Corpus = std::vector<Document>;

} // namespace rforge
