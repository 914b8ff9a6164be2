#include "rforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rforge/errors.hpp"
#include "rforge/rng.hpp"

namespace rforge {

using json = nlohmann::ordered_json;

std::string_view split_name(Split split) {
    switch (split) {
    case Split::kUn:
        return "un";
    case Split::kSup:
        return "sup";
    case Split::kTest:
        return "test";
    case Split::kOodTest:
        return "ood_test";
    }
    throw ContractError("split_name: unknown split");
}

Split parse_split(std::string_view name) {
    if (name == "un") {
        return Split::kUn;
    }
    if (name == "sup") {
        return Split::kSup;
    }
    if (name == "test") {
        return Split::kTest;
    }
    if (name == "ood_test") {
        return Split::kOodTest;
    }
    throw ValidationError("unknown split '" + std::string(name) + "'");
}

std::string_view token_kind_name(TokenKind kind) {
    switch (kind) {
    case TokenKind::kPad:
        return "pad";
    case TokenKind::kRationale:
        return "rationale";
    case TokenKind::kShortcut:
        return "shortcut";
    case TokenKind::kFiller:
        return "filler";
    }
    throw ContractError("token_kind_name: unknown kind");
}

void GeneratorSpec::validate() const {
    if (num_classes < 2) {
        throw SpecError("generator: need at least 2 classes");
    }
    if (rationale_vocab < num_classes || shortcut_vocab < num_classes) {
        throw SpecError("generator: rationale and shortcut vocabularies need one token per class");
    }
    if (filler_vocab == 0) {
        throw SpecError("generator: filler vocabulary is empty");
    }
    if (span_length < 3) {
        throw SpecError("generator: shortcut span length must be at least 3");
    }
    if (rationale_tokens == 0) {
        throw SpecError("generator: need at least one rationale token per document");
    }
    if (2 * max_conflicting_tokens >= rationale_tokens) {
        throw SpecError("generator: conflicting rationale tokens must stay a strict minority");
    }
    if (rationale_tokens + span_length > doc_length) {
        throw SpecError("generator: rationale block plus shortcut span (" +
                        std::to_string(rationale_tokens + span_length) + ") exceeds document length " +
                        std::to_string(doc_length));
    }
    if (rho_train < 0.0 || rho_train > 1.0 || rho_ood < 0.0 || rho_ood > 1.0) {
        throw SpecError("generator: shortcut-label correlations must lie in [0,1]");
    }
}

Vocabulary build_vocabulary(const GeneratorSpec& spec) {
    spec.validate();
    Vocabulary v;
    auto push = [&](std::string text, TokenKind kind, int family) {
        v.text.push_back(std::move(text));
        v.kind.push_back(kind);
        v.family.push_back(family);
    };
    push("<pad>", TokenKind::kPad, -1);
    for (std::size_t i = 0; i < spec.rationale_vocab; ++i) {
        const auto c = static_cast<int>(i % spec.num_classes);
        push("ev" + std::to_string(c) + "_" + std::to_string(i / spec.num_classes), TokenKind::kRationale, c);
    }
    for (std::size_t i = 0; i < spec.shortcut_vocab; ++i) {
        const auto c = static_cast<int>(i % spec.num_classes);
        push("sc" + std::to_string(c) + "_" + std::to_string(i / spec.num_classes), TokenKind::kShortcut, c);
    }
    for (std::size_t i = 0; i < spec.filler_vocab; ++i) {
        push("w" + std::to_string(i), TokenKind::kFiller, -1);
    }
    return v;
}

namespace {

std::vector<std::vector<TokenId>> families(const Vocabulary& vocab, TokenKind kind, std::size_t num_classes) {
    std::vector<std::vector<TokenId>> out(num_classes);
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        if (vocab.kind[id] == kind) {
            out[static_cast<std::size_t>(vocab.family[id])].push_back(static_cast<TokenId>(id));
        }
    }
    return out;
}

std::size_t other_class(Rng& rng, std::size_t label, std::size_t num_classes) {
    const std::size_t pick = uniform_index(rng, num_classes - 1);
    return pick >= label ? pick + 1 : pick;
}

struct Generator {
    const GeneratorSpec& spec;
    std::vector<std::vector<TokenId>> rationale;
    std::vector<std::vector<TokenId>> shortcut;
    std::vector<TokenId> filler;
    Rng rng;

    Document make(std::string id, Split split, double rho) {
        const std::size_t n = spec.doc_length;
        const std::size_t k = spec.rationale_tokens;
        const std::size_t span = spec.span_length;
        Document doc;
        doc.id = std::move(id);
        doc.split = split;
        doc.label = uniform_index(rng, spec.num_classes);
        const std::size_t shortcut_family =
            bernoulli(rng, rho) ? doc.label : other_class(rng, doc.label, spec.num_classes);

        const std::size_t free = n - k - span;
        const std::size_t lead = uniform_index(rng, free + 1);
        const std::size_t gap = uniform_index(rng, free - lead + 1);
        const bool rationale_first = bernoulli(rng, 0.5);
        const std::size_t first_len = rationale_first ? k : span;
        const std::size_t rationale_start = rationale_first ? lead : lead + first_len + gap;
        const std::size_t span_start = rationale_first ? lead + first_len + gap : lead;

        doc.tokens.resize(n);
        for (auto& t : doc.tokens) {
            t = filler[uniform_index(rng, filler.size())];
        }
        Mask gold(n, 0);
        const std::size_t conflicting = uniform_index(rng, spec.max_conflicting_tokens + 1);
        std::vector<std::size_t> slots(k);
        std::iota(slots.begin(), slots.end(), 0);
        std::shuffle(slots.begin(), slots.end(), rng);
        for (std::size_t r = 0; r < k; ++r) {
            const std::size_t family =
                r < conflicting ? other_class(rng, doc.label, spec.num_classes) : doc.label;
            const auto& pool = rationale[family];
            const std::size_t pos = rationale_start + slots[r];
            doc.tokens[pos] = pool[uniform_index(rng, pool.size())];
            gold[pos] = 1;
        }
        const auto& pool = shortcut[shortcut_family];
        for (std::size_t i = 0; i < span; ++i) {
            doc.tokens[span_start + i] = pool[uniform_index(rng, pool.size())];
        }
        doc.gold_mask = std::move(gold);
        return doc;
    }
};

} // namespace

Corpus generate(const GeneratorSpec& spec) {
    const Vocabulary vocab = build_vocabulary(spec);
    Generator gen{spec, families(vocab, TokenKind::kRationale, spec.num_classes),
                  families(vocab, TokenKind::kShortcut, spec.num_classes), {}, Rng(spec.seed)};
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        if (vocab.kind[id] == TokenKind::kFiller) {
            gen.filler.push_back(static_cast<TokenId>(id));
        }
    }
    Corpus corpus;
    corpus.reserve(spec.train_docs + spec.test_docs + spec.ood_docs);
    for (std::size_t i = 0; i < spec.train_docs; ++i) {
        corpus.push_back(gen.make("train-" + std::to_string(i), Split::kUn, spec.rho_train));
    }
    for (std::size_t i = 0; i < spec.test_docs; ++i) {
        corpus.push_back(gen.make("test-" + std::to_string(i), Split::kTest, spec.rho_train));
    }
    for (std::size_t i = 0; i < spec.ood_docs; ++i) {
        corpus.push_back(gen.make("ood-" + std::to_string(i), Split::kOodTest, spec.rho_ood));
    }
    return corpus;
}

std::pair<Corpus, Corpus> split_labeled_fraction(const Corpus& corpus, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) {
        throw SpecError("split_labeled_fraction: fraction must lie in [0,1]");
    }
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].split == Split::kUn || corpus[i].split == Split::kSup) {
            train.push_back(i);
        }
    }
    std::vector<std::size_t> order = train;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto labeled = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(train.size()) + 0.5));
    std::vector<std::uint8_t> is_sup(corpus.size(), 0);
    for (std::size_t r = 0; r < labeled; ++r) {
        is_sup[order[r]] = 1;
    }
    Corpus sup, un;
    for (std::size_t i : train) {
        Document doc = corpus[i];
        if (is_sup[i]) {
            if (!doc.gold_mask) {
                throw ValidationError("split_labeled_fraction: document '" + doc.id +
                                      "' selected as supervised but has no gold rationale");
            }
            doc.split = Split::kSup;
            sup.push_back(std::move(doc));
        } else {
            doc.split = Split::kUn;
            doc.gold_mask.reset();
            doc.cached_spans.reset();
            un.push_back(std::move(doc));
        }
    }
    return {std::move(sup), std::move(un)};
}

Corpus filter_split(const Corpus& corpus, Split split) {
    Corpus out;
    std::copy_if(corpus.begin(), corpus.end(), std::back_inserter(out),
                 [split](const Document& d) { return d.split == split; });
    return out;
}

std::string to_jsonl_line(const Document& doc) {
    json j;
    j["id"] = doc.id;
    j["tokens"] = doc.tokens;
    j["label"] = doc.label;
    if (doc.gold_mask) {
        j["gold_mask"] = *doc.gold_mask;
    }
    j["split"] = std::string(split_name(doc.split));
    if (doc.cached_spans) {
        json spans = json::array();
        for (const auto& s : *doc.cached_spans) {
            spans.push_back({s.start, s.end});
        }
        j["spans"] = std::move(spans);
    }
    if (doc.augmented) {
        j["augmented"] = *doc.augmented;
    }
    return j.dump();
}

namespace {

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError("line " + std::to_string(line) + ": bad or missing field '" + key + "': " + e.what(), line);
    }
}

Mask parse_mask(const json& j, const char* key, std::size_t line) {
    auto raw = field<std::vector<long long>>(j, key, line);
    Mask mask(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] != 0 && raw[i] != 1) {
            throw ValidationError("line " + std::to_string(line) + ": " + key + " entries must be 0 or 1");
        }
        mask[i] = static_cast<std::uint8_t>(raw[i]);
    }
    return mask;
}

} // namespace

Document parse_jsonl_line(const std::string& line, std::size_t line_number) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError("line " + std::to_string(line_number) + ": malformed JSON: " + e.what(), line_number);
    }
    if (!j.is_object()) {
        throw ParseError("line " + std::to_string(line_number) + ": expected a JSON object", line_number);
    }
    static const char* const kKnown[] = {"id", "tokens", "label", "gold_mask", "split", "spans", "augmented"};
    for (const auto& item : j.items()) {
        if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return item.key() == k; }) ==
            std::end(kKnown)) {
            throw ParseError("line " + std::to_string(line_number) + ": unknown field '" + item.key() + "'",
                             line_number);
        }
    }
    Document doc;
    doc.id = field<std::string>(j, "id", line_number);
    auto tokens = field<std::vector<long long>>(j, "tokens", line_number);
    doc.tokens.reserve(tokens.size());
    for (long long t : tokens) {
        if (t < 0 || t > static_cast<long long>(UINT32_MAX)) {
            throw ValidationError("line " + std::to_string(line_number) + ": token id out of range");
        }
        doc.tokens.push_back(static_cast<TokenId>(t));
    }
    const auto label = field<long long>(j, "label", line_number);
    if (label < 0) {
        throw ValidationError("line " + std::to_string(line_number) + ": negative label");
    }
    doc.label = static_cast<std::size_t>(label);
    try {
        doc.split = parse_split(field<std::string>(j, "split", line_number));
    } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line_number) + ": " + e.what());
    }
    if (j.contains("gold_mask")) {
        doc.gold_mask = parse_mask(j, "gold_mask", line_number);
        if (doc.gold_mask->size() != doc.tokens.size()) {
            throw ValidationError("line " + std::to_string(line_number) + ": gold_mask has " +
                                  std::to_string(doc.gold_mask->size()) + " entries for " +
                                  std::to_string(doc.tokens.size()) + " tokens");
        }
    }
    if (j.contains("spans")) {
        auto raw = field<std::vector<std::pair<std::size_t, std::size_t>>>(j, "spans", line_number);
        std::vector<ShortcutSpan> spans;
        for (auto [start, end] : raw) {
            if (start >= end || end > doc.tokens.size()) {
                throw ValidationError("line " + std::to_string(line_number) + ": invalid span");
            }
            spans.push_back({doc.id, start, end});
        }
        doc.cached_spans = std::move(spans);
    }
    if (j.contains("augmented")) {
        doc.augmented = field<std::string>(j, "augmented", line_number);
    }
    return doc;
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open '" + path.string() + "' for writing");
    }
    for (const auto& doc : corpus) {
        out << to_jsonl_line(doc) << '\n';
    }
    if (!out) {
        throw Error("failed writing '" + path.string() + "'");
    }
}

Corpus load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open corpus '" + path.string() + "'");
    }
    Corpus corpus;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) {
            continue;
        }
        corpus.push_back(parse_jsonl_line(line, number));
    }
    return corpus;
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot open '" + path.string() + "' for writing");
    }
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        out << id << '\t' << vocab.text[id] << '\t' << token_kind_name(vocab.kind[id]) << '\t' << vocab.family[id]
            << '\n';
    }
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open vocabulary '" + path.string() + "'");
    }
    Vocabulary vocab;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        std::istringstream fields(line);
        std::size_t id = 0;
        std::string text, kind;
        int family = -1;
        if (!(fields >> id >> text >> kind >> family) || id != vocab.size()) {
            throw ParseError("vocabulary line " + std::to_string(number) + ": malformed entry", number);
        }
        TokenKind k;
        if (kind == "pad") {
            k = TokenKind::kPad;
        } else if (kind == "rationale") {
            k = TokenKind::kRationale;
        } else if (kind == "shortcut") {
            k = TokenKind::kShortcut;
        } else if (kind == "filler") {
            k = TokenKind::kFiller;
        } else {
            throw ParseError("vocabulary line " + std::to_string(number) + ": unknown kind '" + kind + "'", number);
        }
        vocab.text.push_back(std::move(text));
        vocab.kind.push_back(k);
        vocab.family.push_back(family);
    }
    return vocab;
}

std::filesystem::path vocabulary_path_for(const std::filesystem::path& corpus_path) {
    std::filesystem::path p = corpus_path;
    p.replace_extension(".vocab.tsv");
    return p;
}

} // namespace rforge
