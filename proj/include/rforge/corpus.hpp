#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rforge/document.hpp"

namespace rforge {

enum class TokenKind { kPad, kRationale, kShortcut, kFiller };

std::string_view token_kind_name(TokenKind kind);

/// Display strings and roles of every token id of a synthetic corpus.
struct Vocabulary {
    std::vector<std::string> text;
    std::vector<TokenKind> kind;
    /// Class family of rationale and shortcut tokens; -1 for PAD and filler.
    std::vector<int> family;

    std::size_t size() const noexcept { return text.size(); }
    bool is_shortcut(TokenId id) const { return id < kind.size() && kind[id] == TokenKind::kShortcut; }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// Parameters of the shortcut-planted synthetic corpus.
///
/// Every document is filler background with one contiguous block of
/// rationale tokens (gold rationale; a strict plurality come from the
/// label's family) and one contiguous shortcut span whose family agrees with
/// the label with probability rho for the document's split.
struct GeneratorSpec {
    std::size_t num_classes = 2;
    std::size_t rationale_vocab = 40;
    std::size_t shortcut_vocab = 40;
    std::size_t filler_vocab = 119;
    std::size_t train_docs = 2000;
    std::size_t test_docs = 500;
    std::size_t ood_docs = 500;
    std::size_t doc_length = 40;
    std::size_t rationale_tokens = 5;
    std::size_t max_conflicting_tokens = 2;
    std::size_t span_length = 4;
    double rho_train = 0.95;
    double rho_ood = 0.5;
    std::uint64_t seed = 1;

    std::size_t vocab_size() const { return 1 + rationale_vocab + shortcut_vocab + filler_vocab; }
    void validate() const;
};

Vocabulary build_vocabulary(const GeneratorSpec& spec);

/// Training documents (split kUn, gold masks kept for evaluation), then the
/// in-distribution test split (rho_train) and the OOD split (rho_ood).
Corpus generate(const GeneratorSpec& spec);

/// Deterministically labels `fraction` of the training documents (splits
/// kUn/kSup) as supervised. Supervised keep their gold mask; unsupervised lose it.
std::pair<Corpus, Corpus> split_labeled_fraction(const Corpus& corpus, double fraction, std::uint64_t seed);

Corpus filter_split(const Corpus& corpus, Split split);

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_jsonl(const std::filesystem::path& path);
std::string to_jsonl_line(const Document& doc);
Document parse_jsonl_line(const std::string& line, std::size_t line_number);

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);
/// Conventional sidecar location: corpus.jsonl -> corpus.vocab.tsv
std::filesystem::path vocabulary_path_for(const std::filesystem::path& corpus_path);

} // namespace rforge
