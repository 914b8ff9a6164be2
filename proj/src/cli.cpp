#include "rforge/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rforge/augment.hpp"
#include "rforge/errors.hpp"
#include "rforge/metrics.hpp"
#include "rforge/shortcuts.hpp"
#include "rforge/trainer.hpp"

namespace rforge {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Values = std::map<std::string, std::string>;

namespace {

const char* const kSeedEnv = "RATIONALE_FORGE_SEED";

struct CommandSpec {
    std::string name;
    std::string help;
    Values defaults;
    std::vector<std::string> required;
    std::vector<std::string> optional;
    std::vector<std::string> switches;
};

Values generator_defaults() {
    const GeneratorSpec g;
    return {
        {"num_classes", std::to_string(g.num_classes)},
        {"rationale_vocab", std::to_string(g.rationale_vocab)},
        {"shortcut_vocab", std::to_string(g.shortcut_vocab)},
        {"filler_vocab", std::to_string(g.filler_vocab)},
        {"train_docs", std::to_string(g.train_docs)},
        {"test_docs", std::to_string(g.test_docs)},
        {"ood_docs", std::to_string(g.ood_docs)},
        {"doc_length", std::to_string(g.doc_length)},
        {"rationale_tokens", std::to_string(g.rationale_tokens)},
        {"max_conflicting_tokens", std::to_string(g.max_conflicting_tokens)},
        {"span_length", std::to_string(g.span_length)},
        {"rho_train", "0.95"},
        {"rho_ood", "0.5"},
        {"labeled_fraction", "0.25"},
    };
}

Values train_defaults() {
    Values v = TrainConfig{}.to_key_values();
    v.erase("checkpoint_path");
    return v;
}

std::vector<CommandSpec> command_specs() {
    std::vector<CommandSpec> specs;
    {
        CommandSpec c{"gen-data", "Generate the shortcut-planted synthetic corpus", generator_defaults(), {}, {}, {}};
        specs.push_back(std::move(c));
    }
    {
        CommandSpec c{"train", "Train a model, or run the full discovery pipeline with --pipeline", train_defaults(),
                      {"corpus"}, {"init_checkpoint"}, {"pipeline"}};
        specs.push_back(std::move(c));
    }
    specs.push_back({"discover", "Cache shortcut spans on supervised documents using an unsupervised model", {},
                     {"corpus", "checkpoint"}, {}, {}});
    specs.push_back({"augment",
                     "Append shortcut-replaced copies of supervised documents",
                     {{"augment.mode", "mixed"}, {"augment.fraction", "0.25"}},
                     {"corpus"},
                     {"checkpoint"},
                     {}});
    specs.push_back({"eval",
                     "Evaluate a checkpoint on one split",
                     {{"split", "test"}, {"predict_from", "rationale"}},
                     {"corpus", "checkpoint"},
                     {"top_fraction"},
                     {"macro"}});
    specs.push_back({"render",
                     "Write an HTML view of gold, predicted and shortcut tokens",
                     {{"split", "test"}, {"limit", "50"}},
                     {"corpus"},
                     {"checkpoint", "top_fraction"},
                     {}});
    specs.push_back({"report", "Collect eval JSON files into one CSV table", {}, {}, {}, {}});
    for (auto& c : specs) {
        c.defaults.emplace("out", "runs");
        c.optional.push_back("seed");
    }
    return specs;
}

bool is_validation_error(const std::exception& e) {
    if (const auto* stage = dynamic_cast<const StageError*>(&e)) {
        try {
            std::rethrow_if_nested(*stage);
        } catch (const std::exception& inner) {
            return is_validation_error(inner);
        }
        return false;
    }
    return dynamic_cast<const ValidationError*>(&e) != nullptr || dynamic_cast<const ParseError*>(&e) != nullptr ||
           dynamic_cast<const PreconditionError*>(&e) != nullptr || dynamic_cast<const SpecError*>(&e) != nullptr ||
           dynamic_cast<const LabelError*>(&e) != nullptr || dynamic_cast<const VocabularyError*>(&e) != nullptr;
}

std::string html_escape(std::string_view text) {
    std::string out;
    for (char c : text) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '"':
            out += "&quot;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::uint64_t parse_u64(const Values& v, const std::string& key) {
    const std::string& s = v.at(key);
    std::size_t used = 0;
    unsigned long long out = 0;
    try {
        out = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty() || s[0] == '-') {
        throw ValidationError("'" + key + "' expects a non-negative integer, got '" + s + "'");
    }
    return out;
}

double parse_f64(const Values& v, const std::string& key) {
    const std::string& s = v.at(key);
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) {
        throw ValidationError("'" + key + "' expects a number, got '" + s + "'");
    }
    return out;
}

bool parse_flag(const Values& v, const std::string& key) {
    auto it = v.find(key);
    if (it == v.end()) {
        return false;
    }
    if (it->second == "true" || it->second == "1") {
        return true;
    }
    if (it->second == "false" || it->second == "0") {
        return false;
    }
    throw ValidationError("'" + key + "' expects true or false, got '" + it->second + "'");
}

void require_file(const Values& v, const std::string& key) {
    const fs::path path = v.at(key);
    if (!fs::is_regular_file(path)) {
        throw ValidationError("--" + key + ": file '" + path.string() + "' does not exist");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write '" + path.string() + "'");
    }
    out << text;
}

std::optional<Vocabulary> sidecar_vocabulary(const fs::path& corpus_path) {
    const fs::path path = vocabulary_path_for(corpus_path);
    if (!fs::is_regular_file(path)) {
        return std::nullopt;
    }
    return load_vocabulary(path);
}

/// Writes a corpus and, when known, its vocabulary sidecar.
void save_corpus(const Corpus& corpus, const std::optional<Vocabulary>& vocab, const fs::path& path) {
    save_jsonl(corpus, path);
    if (vocab) {
        save_vocabulary(*vocab, vocabulary_path_for(path));
    }
}

std::size_t vocab_size_of(const Corpus& corpus, const std::optional<Vocabulary>& vocab) {
    std::size_t size = vocab ? vocab->size() : 0;
    for (const auto& doc : corpus) {
        for (TokenId t : doc.tokens) {
            size = std::max<std::size_t>(size, std::size_t{t} + 1);
        }
    }
    return size;
}

Split split_from(const Values& v) {
    try {
        return parse_split(v.at("split"));
    } catch (const Error&) {
        throw ValidationError("--split: unknown split '" + v.at("split") + "' (un|sup|test|ood_test)");
    }
}

TrainConfig train_config_from(const Values& v) {
    TrainConfig config;
    for (const auto& [key, value] : train_defaults()) {
        config.set(key, v.at(key));
    }
    return config;
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen_data(const Values& v, const fs::path& dir, std::ostream& out) {
    GeneratorSpec spec;
    spec.num_classes = parse_u64(v, "num_classes");
    spec.rationale_vocab = parse_u64(v, "rationale_vocab");
    spec.shortcut_vocab = parse_u64(v, "shortcut_vocab");
    spec.filler_vocab = parse_u64(v, "filler_vocab");
    spec.train_docs = parse_u64(v, "train_docs");
    spec.test_docs = parse_u64(v, "test_docs");
    spec.ood_docs = parse_u64(v, "ood_docs");
    spec.doc_length = parse_u64(v, "doc_length");
    spec.rationale_tokens = parse_u64(v, "rationale_tokens");
    spec.max_conflicting_tokens = parse_u64(v, "max_conflicting_tokens");
    spec.span_length = parse_u64(v, "span_length");
    spec.rho_train = parse_f64(v, "rho_train");
    spec.rho_ood = parse_f64(v, "rho_ood");
    spec.seed = parse_u64(v, "seed");
    const double fraction = parse_f64(v, "labeled_fraction");
    if (fraction < 0.0 || fraction > 1.0) {
        throw ValidationError("--labeled_fraction must lie in [0,1]");
    }

    const Corpus generated = generate(spec);
    auto [sup, un] = split_labeled_fraction(generated, fraction, spec.seed);
    Corpus corpus = std::move(sup);
    corpus.insert(corpus.end(), un.begin(), un.end());
    for (const auto& doc : generated) {
        if (doc.split == Split::kTest || doc.split == Split::kOodTest) {
            corpus.push_back(doc);
        }
    }
    save_corpus(corpus, build_vocabulary(spec), dir / "corpus.jsonl");
    out << "wrote " << corpus.size() << " documents to " << (dir / "corpus.jsonl").string() << "\n";
    return exit_code::kOk;
}

void write_eval(const EvalReport& report, const fs::path& stem) {
    write_text(fs::path(stem).concat(".json"), report.to_json() + "\n");
    write_text(fs::path(stem).concat(".csv"), EvalReport::csv_header() + "\n" + report.to_csv_row() + "\n");
}

int cmd_train(const Values& v, const fs::path& dir, std::ostream& out, std::ostream& err) {
    require_file(v, "corpus");
    if (v.count("init_checkpoint")) {
        require_file(v, "init_checkpoint");
    }
    TrainConfig config = train_config_from(v);
    config.checkpoint_path = (dir / "model.ckpt").string();
    config.validate();
    const Corpus corpus = load_jsonl(v.at("corpus"));
    const std::optional<Vocabulary> vocab = sidecar_vocabulary(v.at("corpus"));

    if (parse_flag(v, "pipeline")) {
        PipelineOptions options;
        options.vocabulary = vocab ? &*vocab : nullptr;
        options.progress = [&](const std::string& line) { err << line << "\n"; };
        PipelineResult result = pipeline_ssr(corpus, config, options);
        write_text(dir / "report.json", result.report + "\n");
        Trainer(result.unsupervised_model.clone(), config).save(dir / "unsupervised.ckpt");
        save_corpus(result.supervised, vocab, dir / "supervised.jsonl");
        for (const auto& [split, report] : result.final_eval) {
            write_eval(report, dir / ("eval-" + split));
        }
        out << "pipeline finished: " << result.span_count << " shortcut spans; model at " << config.checkpoint_path
            << "\n";
        return exit_code::kOk;
    }

    const Corpus docs = truncate_documents(corpus, config.max_length);
    const Corpus sup = filter_split(docs, Split::kSup);
    const Corpus un = filter_split(docs, Split::kUn);
    std::size_t classes = 2;
    for (const auto& doc : docs) {
        classes = std::max(classes, doc.label + 1);
    }
    ModelBundle bundle = v.count("init_checkpoint")
                             ? load_model(v.at("init_checkpoint"))
                             : ModelBundle::create({vocab_size_of(docs, vocab), config.hidden_dim, classes},
                                                   config.seed, config.share_imitator_head);
    Trainer trainer(std::move(bundle), config);
    std::ofstream history(dir / "history.jsonl", std::ios::trunc);
    trainer.train(sup, un, [&](const EpochStats& s) {
        json line;
        line["epoch"] = s.epoch;
        line["loss"] = s.loss;
        line["terms"] = s.terms;
        history << line.dump() << "\n";
        err << "epoch " << s.epoch << " loss " << s.loss << "\n";
    });
    trainer.save(config.checkpoint_path);
    EvalOptions eval;
    eval.vocabulary = vocab ? &*vocab : nullptr;
    for (Split split : {Split::kTest, Split::kOodTest}) {
        const Corpus held_out = filter_split(docs, split);
        if (!held_out.empty()) {
            write_eval(evaluate(trainer.bundle(), held_out, eval), dir / ("eval-" + std::string(split_name(split))));
        }
    }
    out << "trained " << train_mode_name(config.mode) << " for " << config.epochs << " epochs; model at "
        << config.checkpoint_path << "\n";
    return exit_code::kOk;
}

int cmd_discover(const Values& v, const fs::path& dir, std::ostream& out) {
    require_file(v, "corpus");
    require_file(v, "checkpoint");
    Corpus corpus = load_jsonl(v.at("corpus"));
    const ModelBundle model = load_model(v.at("checkpoint"));
    std::size_t total = 0;
    std::size_t supervised = 0;
    for (auto& doc : corpus) {
        if (doc.split == Split::kSup) {
            total += discover_corpus(model, std::span<Document>(&doc, 1));
            ++supervised;
        }
    }
    if (supervised == 0) {
        throw PreconditionError("discover: corpus has no supervised documents");
    }
    save_corpus(corpus, sidecar_vocabulary(v.at("corpus")), dir / "corpus.jsonl");
    out << "discovered " << total << " shortcut spans in " << supervised << " supervised documents\n";
    return exit_code::kOk;
}

int cmd_augment(const Values& v, const fs::path& dir, std::ostream& out) {
    require_file(v, "corpus");
    const AugmentMode mode = parse_augment_mode(v.at("augment.mode"));
    const bool semantic = mode == AugmentMode::kSemantic || mode == AugmentMode::kMixed;
    if (semantic && !v.count("checkpoint")) {
        throw ValidationError("augment: mode '" + v.at("augment.mode") +
                              "' needs --checkpoint of the unsupervised model");
    }
    if (v.count("checkpoint")) {
        require_file(v, "checkpoint");
    }
    Corpus corpus = load_jsonl(v.at("corpus"));
    const Corpus sup = filter_split(corpus, Split::kSup);
    for (const auto& doc : sup) {
        spans_of(doc);
    }
    Corpus pool_docs = sup;
    const Corpus un = filter_split(corpus, Split::kUn);
    pool_docs.insert(pool_docs.end(), un.begin(), un.end());
    const std::vector<TokenId> pool = token_pool(pool_docs);

    std::optional<ModelBundle> model;
    std::optional<SemanticAugmenter> augmenter;
    if (semantic) {
        model.emplace(load_model(v.at("checkpoint")));
        augmenter.emplace(model->encoder(EncoderRole::kPredictorUn), sup);
    }
    Rng rng(parse_u64(v, "seed"));
    AugmentSummary summary;
    const auto added = augment_corpus(sup, mode, parse_f64(v, "augment.fraction"), pool,
                                      augmenter ? &*augmenter : nullptr, rng, &summary);
    corpus.insert(corpus.end(), added.begin(), added.end());
    save_corpus(corpus, sidecar_vocabulary(v.at("corpus")), dir / "corpus.jsonl");
    out << "added " << added.size() << " documents (" << summary.random << " random, " << summary.semantic
        << " semantic)\n";
    return exit_code::kOk;
}

int cmd_eval(const Values& v, const fs::path& dir, std::ostream& out) {
    require_file(v, "corpus");
    require_file(v, "checkpoint");
    const Split split = split_from(v);
    EvalOptions options;
    const std::string& from = v.at("predict_from");
    if (from == "rationale") {
        options.predict_from = PredictFrom::kRationale;
    } else if (from == "full") {
        options.predict_from = PredictFrom::kFullInput;
    } else {
        throw ValidationError("--predict_from expects rationale or full, got '" + from + "'");
    }
    if (v.count("top_fraction")) {
        options.top_fraction = parse_f64(v, "top_fraction");
    }
    options.macro_token_f1 = parse_flag(v, "macro");
    const Corpus corpus = filter_split(load_jsonl(v.at("corpus")), split);
    const std::optional<Vocabulary> vocab = sidecar_vocabulary(v.at("corpus"));
    options.vocabulary = vocab ? &*vocab : nullptr;
    const ModelBundle model = load_model(v.at("checkpoint"));
    const EvalReport report = evaluate(model, corpus, options);
    write_eval(report, dir / "eval");
    out << report.to_json() << "\n";
    return exit_code::kOk;
}

int cmd_render(const Values& v, const fs::path& dir, std::ostream& out) {
    require_file(v, "corpus");
    if (v.count("checkpoint")) {
        require_file(v, "checkpoint");
    }
    Corpus docs = filter_split(load_jsonl(v.at("corpus")), split_from(v));
    const std::size_t limit = parse_u64(v, "limit");
    if (docs.size() > limit) {
        docs.resize(limit);
    }
    std::vector<Mask> predicted;
    if (v.count("checkpoint")) {
        std::optional<double> top;
        if (v.count("top_fraction")) {
            top = parse_f64(v, "top_fraction");
        }
        predicted = predicted_masks(load_model(v.at("checkpoint")), docs, top);
    } else {
        for (const auto& doc : docs) {
            predicted.emplace_back(doc.tokens.size(), 0);
        }
    }
    const std::optional<Vocabulary> vocab = sidecar_vocabulary(v.at("corpus"));
    write_text(dir / "rationales.html", render_html(docs, predicted, vocab ? &*vocab : nullptr));
    out << "rendered " << docs.size() << " documents to " << (dir / "rationales.html").string() << "\n";
    return exit_code::kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const fs::path& dir, std::ostream& out) {
    if (inputs.empty()) {
        throw ValidationError("report: pass one or more eval JSON files");
    }
    std::ostringstream csv;
    csv << "source," << EvalReport::csv_header() << "\n";
    for (const auto& input : inputs) {
        if (!fs::is_regular_file(input)) {
            throw ValidationError("report: file '" + input + "' does not exist");
        }
        std::ifstream in(input);
        std::stringstream text;
        text << in.rdbuf();
        csv << input << "," << EvalReport::from_json(text.str()).to_csv_row() << "\n";
    }
    write_text(dir / "report.csv", csv.str());
    out << csv.str();
    return exit_code::kOk;
}

} // namespace

// ---- config text -----------------------------------------------------------

Values parse_config_text(const std::string& text) {
    Values out;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    const auto trim = [](std::string s) {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string::npos) {
            return std::string();
        }
        const auto last = s.find_last_not_of(" \t\r");
        return s.substr(first, last - first + 1);
    };
    while (std::getline(in, line)) {
        ++number;
        line = trim(line);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(number) + ": expected key=value", number);
        }
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw ParseError("config line " + std::to_string(number) + ": empty key", number);
        }
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

Values load_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("config file '" + path.string() + "' cannot be read");
    }
    std::stringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str());
}

std::string format_config(const Values& values) {
    std::string out;
    for (const auto& [key, value] : values) {
        out += key + "=" + value + "\n";
    }
    return out;
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << hash;
    return out.str();
}

std::string render_html(std::span<const Document> docs, std::span<const Mask> predicted, const Vocabulary* vocabulary) {
    if (predicted.size() != docs.size()) {
        throw DimensionError("render: " + std::to_string(predicted.size()) + " masks for " +
                             std::to_string(docs.size()) + " documents");
    }
    std::ostringstream html;
    html << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Rationales</title>\n<style>\n"
         << "body { font-family: monospace; }\n"
         << "mark { background: #ffe08a; }\n"
         << "s { color: #a51d2d; }\n"
         << ".doc { margin-bottom: 1.5em; }\n"
         << "</style>\n</head>\n<body>\n"
         << "<p class=\"legend\"><u>gold</u> <mark>predicted</mark> <s>shortcut</s></p>\n";
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const Document& doc = docs[d];
        const Mask& pred = predicted[d];
        if (pred.size() != doc.tokens.size()) {
            throw DimensionError("render: mask length mismatch for document '" + doc.id + "'");
        }
        std::vector<std::uint8_t> shortcut(doc.tokens.size(), 0);
        if (doc.cached_spans) {
            for (const auto& span : *doc.cached_spans) {
                for (std::size_t i = span.start; i < span.end && i < shortcut.size(); ++i) {
                    shortcut[i] = 1;
                }
            }
        }
        html << "<div class=\"doc\" id=\"doc-" << html_escape(doc.id) << "\">\n<h3>" << html_escape(doc.id)
             << " (label " << doc.label << ")</h3>\n<p>";
        bool first = true;
        for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
            const TokenId t = doc.tokens[i];
            if (t == kPadId) {
                continue;
            }
            std::string token = vocabulary != nullptr && t < vocabulary->size() ? html_escape(vocabulary->text[t])
                                                                                : "#" + std::to_string(t);
            if (shortcut[i]) {
                token = "<s>" + token + "</s>";
            }
            if (doc.gold_mask && (*doc.gold_mask)[i]) {
                token = "<u>" + token + "</u>";
            }
            if (pred[i]) {
                token = "<mark>" + token + "</mark>";
            }
            html << (first ? "" : " ") << token;
            first = false;
        }
        html << "</p>\n</div>\n";
    }
    html << "</body>\n</html>\n";
    return html.str();
}

// ---- entry point -----------------------------------------------------------

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Selective rationalization with shortcut discovery", "rforge"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    const std::vector<CommandSpec> specs = command_specs();
    struct Bound {
        const CommandSpec* spec = nullptr;
        CLI::App* app = nullptr;
        std::string config_path;
        std::map<std::string, std::string> flags;
        std::map<std::string, CLI::Option*> options;
        std::vector<std::string> inputs;
    };
    std::vector<Bound> bound(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const CommandSpec& spec = specs[i];
        Bound& b = bound[i];
        b.spec = &spec;
        b.app = app.add_subcommand(spec.name, spec.help);
        b.app->add_option("--config", b.config_path, "flat key=value file; flags override it");
        std::vector<std::string> keys;
        for (const auto& [key, value] : spec.defaults) {
            keys.push_back(key);
        }
        keys.insert(keys.end(), spec.required.begin(), spec.required.end());
        keys.insert(keys.end(), spec.optional.begin(), spec.optional.end());
        for (const auto& key : keys) {
            if (b.options.count(key) == 0) {
                b.options[key] = b.app->add_option("--" + key, b.flags[key]);
            }
        }
        for (const auto& key : spec.switches) {
            b.options[key] = b.app->add_flag("--" + key);
        }
        if (spec.name == "report") {
            b.app->add_option("inputs", b.inputs, "eval JSON files");
        }
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return exit_code::kValidation;
    }

    const Bound* chosen = nullptr;
    for (const auto& b : bound) {
        if (b.app->parsed()) {
            chosen = &b;
        }
    }
    const CommandSpec& spec = *chosen->spec;

    try {
        Values effective = spec.defaults;
        std::vector<std::string> known;
        for (const auto& [key, option] : chosen->options) {
            known.push_back(key);
        }
        if (!chosen->config_path.empty()) {
            for (const auto& [key, value] : load_config_file(chosen->config_path)) {
                if (std::find(known.begin(), known.end(), key) == known.end()) {
                    throw ValidationError("config file: unknown key '" + key + "' for " + spec.name);
                }
                effective[key] = value;
            }
        }
        for (const auto& [key, option] : chosen->options) {
            if (option->count() == 0) {
                continue;
            }
            const bool is_switch =
                std::find(spec.switches.begin(), spec.switches.end(), key) != spec.switches.end();
            effective[key] = is_switch ? "true" : chosen->flags.at(key);
        }
        if (effective.count("seed") == 0) {
            const char* env = std::getenv(kSeedEnv);
            effective["seed"] = env != nullptr && *env != '\0' ? env : "1";
        }
        parse_u64(effective, "seed");
        for (const auto& key : spec.required) {
            if (effective.count(key) == 0) {
                throw ValidationError(spec.name + ": --" + key + " is required");
            }
        }

        Values hashed = effective;
        hashed.erase("out");
        std::string identity = spec.name + "\n" + format_config(hashed);
        for (const auto& input : chosen->inputs) {
            identity += "input=" + input + "\n";
        }
        const fs::path dir = fs::path(effective.at("out")) / (spec.name + "-" + fnv1a_hex(identity));
        fs::create_directories(dir);
        write_text(dir / "config.txt", format_config(effective));

        if (spec.name == "gen-data") {
            return cmd_gen_data(effective, dir, out);
        }
        if (spec.name == "train") {
            return cmd_train(effective, dir, out, err);
        }
        if (spec.name == "discover") {
            return cmd_discover(effective, dir, out);
        }
        if (spec.name == "augment") {
            return cmd_augment(effective, dir, out);
        }
        if (spec.name == "eval") {
            return cmd_eval(effective, dir, out);
        }
        if (spec.name == "render") {
            return cmd_render(effective, dir, out);
        }
        return cmd_report(chosen->inputs, dir, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return is_validation_error(e) ? exit_code::kValidation : exit_code::kRuntime;
    }
}

} // namespace rforge
