#include "rforge/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rforge/shortcuts.hpp"

namespace rforge {

using json = nlohmann::ordered_json;

namespace {

constexpr TrainMode kAllModes[] = {TrainMode::kUn, TrainMode::kSup, TrainMode::kSemi, TrainMode::kSsrUnif,
                                   TrainMode::kSsrVirt};

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || end != value.data() + value.size()) {
        throw ValidationError("config: '" + key + "' expects a number, got '" + value + "'");
    }
    return out;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || end != value.data() + value.size()) {
        throw ValidationError("config: '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    throw ValidationError("config: '" + key + "' expects true or false, got '" + value + "'");
}

std::string rng_state(const Rng& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

// ---- binary checkpoint helpers ---------------------------------------------

constexpr char kMagic[4] = {'R', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(std::ostream& out) : m_out(out) {}
    void u64(std::uint64_t v) { m_out.write(reinterpret_cast<const char*>(&v), sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        m_out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void doubles(std::span<const double> v) {
        u64(v.size());
        m_out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }

private:
    std::ostream& m_out;
};

class Reader {
public:
    explicit Reader(std::istream& in) : m_in(in) {}
    std::uint64_t u64() {
        std::uint64_t v = 0;
        read(&v, sizeof v);
        return v;
    }
    std::string str() {
        std::string s(bounded(u64(), 1), '\0');
        read(s.data(), s.size());
        return s;
    }
    std::vector<double> doubles() {
        std::vector<double> v(bounded(u64(), sizeof(double)));
        read(v.data(), v.size() * sizeof(double));
        return v;
    }

private:
    static std::size_t bounded(std::uint64_t n, std::size_t width) {
        if (n > (std::uint64_t{1} << 32) / width) {
            throw ParseError("checkpoint: implausible length field", 0);
        }
        return static_cast<std::size_t>(n);
    }
    void read(void* dst, std::size_t bytes) {
        m_in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
        if (static_cast<std::size_t>(m_in.gcount()) != bytes) {
            throw ParseError("checkpoint: truncated file", 0);
        }
    }
    std::istream& m_in;
};

std::vector<std::string> trainable_names(const ModelBundle& bundle) {
    std::vector<std::string> frozen;
    if (bundle.imitator_frozen()) {
        frozen = bundle.group_tensor_names(bundle.group_of(role_name(EncoderRole::kImitator)));
    }
    std::vector<std::string> names;
    for (const auto& [name, tensor] : bundle.parameters()) {
        if (!tensor.has_grad()) {
            continue;
        }
        if (std::find(frozen.begin(), frozen.end(), name) != frozen.end()) {
            throw ContractError("trainer: frozen imitator tensor '" + name + "' received a gradient");
        }
        names.push_back(name);
    }
    return names;
}

Tensor supervised_loss(TrainMode mode, const ModelBundle& bundle, const Document& doc, const LossWeights& w,
                       LossLog* log) {
    switch (mode) {
    case TrainMode::kSsrUnif:
        return ssr_unif_supervised_loss(bundle, doc, w, log);
    case TrainMode::kSsrVirt:
        return ssr_virt_supervised_loss(bundle, doc, w, log);
    default:
        return loss_sup(bundle, doc, w, log);
    }
}

Tensor unsupervised_loss(TrainMode mode, const ModelBundle& bundle, const Document& doc, const LossWeights& w,
                         Rng& rng, LossLog* log) {
    if (mode == TrainMode::kSsrVirt) {
        return ssr_virt_unsupervised_loss(bundle, doc, w, rng, log);
    }
    return loss_un(bundle, doc, w, rng, log);
}

bool has_sup_phase(TrainMode mode) { return mode != TrainMode::kUn; }
bool has_un_phase(TrainMode mode) { return mode != TrainMode::kSup; }

json eval_json(const std::map<std::string, EvalReport>& evals) {
    json out = json::object();
    for (const auto& [split, report] : evals) {
        out[split] = json::parse(report.to_json());
    }
    return out;
}

std::map<std::string, EvalReport> evaluate_splits(const ModelBundle& bundle, const Corpus& corpus,
                                                  const PipelineOptions& options) {
    std::map<std::string, EvalReport> out;
    EvalOptions eval = options.eval;
    if (options.vocabulary != nullptr) {
        eval.vocabulary = options.vocabulary;
    }
    for (Split split : {Split::kTest, Split::kOodTest}) {
        const Corpus docs = filter_split(corpus, split);
        if (!docs.empty()) {
            out[std::string(split_name(split))] = evaluate(bundle, docs, eval);
        }
    }
    return out;
}

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        std::throw_with_nested(StageError(stage, e.what()));
    }
}

} // namespace

// ---- names -----------------------------------------------------------------

std::string_view train_mode_name(TrainMode mode) {
    switch (mode) {
    case TrainMode::kUn:
        return "un";
    case TrainMode::kSup:
        return "sup";
    case TrainMode::kSemi:
        return "semi";
    case TrainMode::kSsrUnif:
        return "ssr_unif";
    case TrainMode::kSsrVirt:
        return "ssr_virt";
    }
    throw ContractError("train_mode_name: unknown mode");
}

TrainMode parse_train_mode(std::string_view name) {
    for (TrainMode mode : kAllModes) {
        if (train_mode_name(mode) == name) {
            return mode;
        }
    }
    throw ValidationError("unknown training mode '" + std::string(name) + "' (un|sup|semi|ssr_unif|ssr_virt)");
}

bool needs_spans(TrainMode mode) { return mode == TrainMode::kSsrUnif || mode == TrainMode::kSsrVirt; }

std::string_view init_mode_name(InitMode mode) { return mode == InitMode::kWarm ? "warm" : "fresh"; }

InitMode parse_init_mode(std::string_view name) {
    if (name == "warm") {
        return InitMode::kWarm;
    }
    if (name == "fresh") {
        return InitMode::kFresh;
    }
    throw ValidationError("unknown init mode '" + std::string(name) + "' (warm|fresh)");
}

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw SpecError("config: batch_size must be positive");
    }
    if (hidden_dim == 0) {
        throw SpecError("config: model.hidden_dim must be positive");
    }
    if (max_length == 0) {
        throw SpecError("config: max_length must be positive");
    }
    if (augment_fraction < 0.0 || augment_fraction > 1.0) {
        throw SpecError("config: augment.fraction must lie in [0,1]");
    }
    optimizer.validate();
    weights.validate();
}

TrainConfig TrainConfig::pretrained_profile() {
    TrainConfig c;
    c.optimizer.learning_rate = 2e-5;
    c.batch_size = 4;
    c.epochs = 30;
    c.max_length = 512;
    return c;
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
    return {
        {"mode", std::string(train_mode_name(mode))},
        {"epochs", std::to_string(epochs)},
        {"batch_size", std::to_string(batch_size)},
        {"seed", std::to_string(seed)},
        {"max_length", std::to_string(max_length)},
        {"checkpoint_path", checkpoint_path},
        {"optimizer.learning_rate", format_double(optimizer.learning_rate)},
        {"optimizer.beta1", format_double(optimizer.beta1)},
        {"optimizer.beta2", format_double(optimizer.beta2)},
        {"optimizer.epsilon", format_double(optimizer.epsilon)},
        {"optimizer.weight_decay", format_double(optimizer.weight_decay)},
        {"loss.lambda_sparsity", format_double(weights.lambda_sparsity)},
        {"loss.lambda_continuity", format_double(weights.lambda_continuity)},
        {"loss.alpha", format_double(weights.alpha)},
        {"loss.lambda_unif", format_double(weights.lambda_unif)},
        {"loss.lambda_virt", format_double(weights.lambda_virt)},
        {"loss.lambda_diff", format_double(weights.lambda_diff)},
        {"loss.tau", format_double(weights.tau)},
        {"loss.straight_through", weights.straight_through_predictor ? "true" : "false"},
        {"model.hidden_dim", std::to_string(hidden_dim)},
        {"model.share_imitator_head", share_imitator_head ? "true" : "false"},
        {"augment.mode", std::string(augment_mode_name(augment))},
        {"augment.fraction", format_double(augment_fraction)},
        {"pipeline.stage1_epochs", std::to_string(stage1_epochs)},
        {"pipeline.stage4_init", std::string(init_mode_name(stage4_init))},
    };
}

void TrainConfig::set(const std::string& key, const std::string& value) {
    const auto d = [&] { return parse_double(key, value); };
    const auto u = [&] { return parse_unsigned(key, value); };
    if (key == "mode") {
        mode = parse_train_mode(value);
    } else if (key == "epochs") {
        epochs = u();
    } else if (key == "batch_size") {
        batch_size = u();
    } else if (key == "seed") {
        seed = u();
    } else if (key == "max_length") {
        max_length = u();
    } else if (key == "checkpoint_path") {
        checkpoint_path = value;
    } else if (key == "optimizer.learning_rate") {
        optimizer.learning_rate = d();
    } else if (key == "optimizer.beta1") {
        optimizer.beta1 = d();
    } else if (key == "optimizer.beta2") {
        optimizer.beta2 = d();
    } else if (key == "optimizer.epsilon") {
        optimizer.epsilon = d();
    } else if (key == "optimizer.weight_decay") {
        optimizer.weight_decay = d();
    } else if (key == "loss.lambda_sparsity") {
        weights.lambda_sparsity = d();
    } else if (key == "loss.lambda_continuity") {
        weights.lambda_continuity = d();
    } else if (key == "loss.alpha") {
        weights.alpha = d();
    } else if (key == "loss.lambda_unif") {
        weights.lambda_unif = d();
    } else if (key == "loss.lambda_virt") {
        weights.lambda_virt = d();
    } else if (key == "loss.lambda_diff") {
        weights.lambda_diff = d();
    } else if (key == "loss.tau") {
        weights.tau = d();
    } else if (key == "loss.straight_through") {
        weights.straight_through_predictor = parse_bool(key, value);
    } else if (key == "model.hidden_dim") {
        hidden_dim = u();
    } else if (key == "model.share_imitator_head") {
        share_imitator_head = parse_bool(key, value);
    } else if (key == "augment.mode") {
        augment = parse_augment_mode(value);
    } else if (key == "augment.fraction") {
        augment_fraction = d();
    } else if (key == "pipeline.stage1_epochs") {
        stage1_epochs = u();
    } else if (key == "pipeline.stage4_init") {
        stage4_init = parse_init_mode(value);
    } else {
        throw ValidationError("config: unknown key '" + key + "'");
    }
}

// ---- checkpoint ------------------------------------------------------------

void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("checkpoint: cannot open '" + path.string() + "' for writing");
    }
    out.write(kMagic, sizeof kMagic);
    Writer w(out);
    w.u64(kVersion);
    w.u64(ck.metadata.size());
    for (const auto& [k, v] : ck.metadata) {
        w.str(k);
        w.str(v);
    }
    w.u64(ck.dims.vocab_size);
    w.u64(ck.dims.hidden_dim);
    w.u64(ck.dims.num_classes);
    w.u64(ck.aliases.size());
    for (const auto& [role, group] : ck.aliases) {
        w.str(role);
        w.str(group);
    }
    w.u64(ck.parameters.size());
    for (const auto& [name, tensor] : ck.parameters) {
        w.str(name);
        w.u64(tensor.rank());
        for (std::size_t dim : tensor.shape()) {
            w.u64(dim);
        }
        w.doubles(tensor.data());
    }
    w.u64(ck.optimizer.size());
    for (const auto& [name, slot] : ck.optimizer) {
        w.str(name);
        w.u64(slot.steps);
        w.doubles(slot.m);
        w.doubles(slot.v);
    }
    if (!out) {
        throw Error("checkpoint: write to '" + path.string() + "' failed");
    }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("checkpoint: cannot open '" + path.string() + "'");
    }
    char magic[4] = {};
    in.read(magic, sizeof magic);
    if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) {
        throw ParseError("checkpoint: '" + path.string() + "' is not a checkpoint file", 0);
    }
    Reader r(in);
    const std::uint64_t version = r.u64();
    if (version != kVersion) {
        throw ParseError("checkpoint: unsupported version " + std::to_string(version), 0);
    }
    Checkpoint ck;
    for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) {
        std::string k = r.str();
        ck.metadata[k] = r.str();
    }
    ck.dims.vocab_size = r.u64();
    ck.dims.hidden_dim = r.u64();
    ck.dims.num_classes = r.u64();
    for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) {
        std::string role = r.str();
        ck.aliases[role] = r.str();
    }
    for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) {
        std::string name = r.str();
        Shape shape(r.u64());
        for (auto& dim : shape) {
            dim = r.u64();
        }
        std::vector<double> data = r.doubles();
        if (data.size() != shape_numel(shape)) {
            throw ParseError("checkpoint: tensor '" + name + "' has inconsistent size", 0);
        }
        ck.parameters[name] = Tensor::from(std::move(shape), std::move(data), true);
    }
    for (std::uint64_t n = r.u64(), i = 0; i < n; ++i) {
        std::string name = r.str();
        AdamSlot slot;
        slot.steps = r.u64();
        slot.m = r.doubles();
        slot.v = r.doubles();
        ck.optimizer[name] = std::move(slot);
    }
    return ck;
}

ModelBundle load_model(const std::filesystem::path& path) {
    Checkpoint ck = read_checkpoint(path);
    return ModelBundle::from_parts(ck.dims, std::move(ck.parameters), std::move(ck.aliases));
}

// ---- trainer ---------------------------------------------------------------

Trainer::Trainer(ModelBundle bundle, TrainConfig config)
    : m_bundle(std::move(bundle)), m_config(std::move(config)), m_optimizer(m_config.optimizer),
      m_rng(m_config.seed) {
    m_config.validate();
}

void Trainer::run_phase(std::span<const Document> docs, bool supervised, EpochStats& stats, double& loss_total,
                        std::map<std::string, std::size_t>& term_counts) {
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), m_rng);
    const TrainMode mode = m_config.mode;
    const std::size_t batch = m_config.batch_size;
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t end = std::min(order.size(), start + batch);
        LossLog log;
        Tensor total = Tensor::scalar(0.0);
        for (std::size_t k = start; k < end; ++k) {
            const Document& doc = docs[order[k]];
            const Tensor doc_loss = supervised ? supervised_loss(mode, m_bundle, doc, m_config.weights, &log)
                                               : unsupervised_loss(mode, m_bundle, doc, m_config.weights, m_rng, &log);
            total = add(total, doc_loss);
        }
        const auto count = static_cast<double>(end - start);
        const Tensor loss = scale(total, 1.0 / count);
        loss_total += total.item();
        for (const auto& [term, value] : log) {
            stats.terms[term] += value;
            term_counts[term] += end - start;
        }
        if (loss.requires_grad()) {
            backward(loss);
            m_optimizer.step(m_bundle, trainable_names(m_bundle));
        } else {
            active_tape().clear();
        }
        ++(supervised ? stats.sup_batches : stats.un_batches);
    }
}

EpochStats Trainer::train_epoch(std::span<const Document> supervised, std::span<const Document> unsupervised) {
    const TrainMode mode = m_config.mode;
    if (needs_spans(mode)) {
        for (const auto& doc : supervised) {
            if (!doc.cached_spans) {
                throw PreconditionError("training mode '" + std::string(train_mode_name(mode)) +
                                        "' needs discovered shortcut spans, but document '" + doc.id +
                                        "' has none; run discover first");
            }
        }
    }
    EpochStats stats;
    stats.epoch = m_epoch + 1;
    double loss_total = 0.0;
    std::size_t doc_count = 0;
    std::map<std::string, std::size_t> term_counts;

    if (has_sup_phase(mode)) {
        m_bundle.set_imitator_frozen(false);
        run_phase(supervised, true, stats, loss_total, term_counts);
        doc_count += supervised.size();
    }
    if (has_un_phase(mode)) {
        m_bundle.set_imitator_frozen(mode == TrainMode::kSsrVirt);
        run_phase(unsupervised, false, stats, loss_total, term_counts);
        m_bundle.set_imitator_frozen(false);
        doc_count += unsupervised.size();
    }
    for (auto& [term, value] : stats.terms) {
        value /= static_cast<double>(term_counts[term]);
    }
    stats.loss = doc_count == 0 ? 0.0 : loss_total / static_cast<double>(doc_count);
    ++m_epoch;
    return stats;
}

std::vector<EpochStats> Trainer::train(std::span<const Document> supervised, std::span<const Document> unsupervised,
                                       const std::function<void(const EpochStats&)>& on_epoch) {
    std::vector<EpochStats> history;
    for (std::size_t e = 0; e < m_config.epochs; ++e) {
        history.push_back(train_epoch(supervised, unsupervised));
        if (on_epoch) {
            on_epoch(history.back());
        }
    }
    return history;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.metadata = m_config.to_key_values();
    ck.metadata["trainer.epoch"] = std::to_string(m_epoch);
    ck.metadata["trainer.rng"] = rng_state(m_rng);
    ck.dims = m_bundle.dims();
    ck.aliases = m_bundle.aliases();
    for (const auto& [name, tensor] : m_bundle.parameters()) {
        ck.parameters[name] = tensor.clone(true);
    }
    ck.optimizer = m_optimizer.state();
    return ck;
}

Trainer Trainer::from_checkpoint(const Checkpoint& ck) {
    TrainConfig config;
    std::string rng_text;
    std::size_t epoch = 0;
    for (const auto& [key, value] : ck.metadata) {
        if (key == "trainer.rng") {
            rng_text = value;
        } else if (key == "trainer.epoch") {
            epoch = parse_unsigned(key, value);
        } else {
            config.set(key, value);
        }
    }
    std::map<std::string, Tensor> params;
    for (const auto& [name, tensor] : ck.parameters) {
        params[name] = tensor.clone(true);
    }
    Trainer trainer(ModelBundle::from_parts(ck.dims, std::move(params), ck.aliases), config);
    for (const auto& [name, slot] : ck.optimizer) {
        const auto it = trainer.m_bundle.parameters().find(name);
        if (it == trainer.m_bundle.parameters().end() || slot.m.size() != it->second.numel() ||
            slot.v.size() != it->second.numel()) {
            throw ValidationError("checkpoint: optimizer state for '" + name + "' does not match the model");
        }
    }
    trainer.m_optimizer.mutable_state() = ck.optimizer;
    trainer.m_epoch = epoch;
    if (!rng_text.empty()) {
        std::istringstream in(rng_text);
        in >> trainer.m_rng;
        if (!in) {
            throw ParseError("checkpoint: corrupt RNG state", 0);
        }
    }
    return trainer;
}

// ---- corpus helpers --------------------------------------------------------

Corpus truncate_documents(const Corpus& corpus, std::size_t max_length) {
    Corpus out = corpus;
    for (auto& doc : out) {
        if (doc.tokens.size() <= max_length) {
            continue;
        }
        doc.tokens.resize(max_length);
        if (doc.gold_mask) {
            doc.gold_mask->resize(max_length);
        }
        if (doc.cached_spans) {
            std::vector<ShortcutSpan> kept;
            for (auto span : *doc.cached_spans) {
                span.end = std::min(span.end, max_length);
                if (span.start < span.end) {
                    kept.push_back(span);
                }
            }
            doc.cached_spans = std::move(kept);
        }
    }
    return out;
}

// ---- pipeline --------------------------------------------------------------

PipelineResult pipeline_ssr(const Corpus& input, const TrainConfig& config, const PipelineOptions& options) {
    config.validate();
    const auto say = [&](const std::string& line) {
        if (options.progress) {
            options.progress(line);
        }
    };
    const Corpus corpus = truncate_documents(input, config.max_length);
    Corpus sup = filter_split(corpus, Split::kSup);
    const Corpus un = filter_split(corpus, Split::kUn);
    if (sup.empty() && config.mode != TrainMode::kUn) {
        throw PreconditionError("pipeline: corpus has no supervised documents");
    }
    std::size_t vocab = options.vocabulary != nullptr ? options.vocabulary->size() : 0;
    for (const auto& doc : corpus) {
        for (TokenId t : doc.tokens) {
            vocab = std::max<std::size_t>(vocab, std::size_t{t} + 1);
        }
    }
    std::size_t classes = 2;
    for (const auto& doc : corpus) {
        classes = std::max(classes, doc.label + 1);
    }
    const ModelDims model_dims{vocab, config.hidden_dim, classes};

    json report;
    report["mode"] = train_mode_name(config.mode);
    report["config"] = config.to_key_values();
    report["stages"] = json::array();

    // Stage 1: unsupervised model.
    TrainConfig stage1 = config;
    stage1.mode = TrainMode::kUn;
    stage1.epochs = config.stage1_epochs;
    Trainer un_trainer = run_stage("train_unsupervised", [&] {
        Trainer t(ModelBundle::create(model_dims, config.seed, config.share_imitator_head), stage1);
        t.train({}, un, [&](const EpochStats& s) {
            say("[un] epoch " + std::to_string(s.epoch) + " loss " + format_double(s.loss));
        });
        return t;
    });
    PipelineResult result{un_trainer.bundle().clone(), un_trainer.bundle().clone(), {}, 0, {}, {}, {}};
    result.stage1_eval = run_stage("evaluate_unsupervised", [&] {
        return evaluate_splits(result.unsupervised_model, corpus, options);
    });
    report["stages"].push_back({{"stage", "train_unsupervised"},
                                {"documents", un.size()},
                                {"epochs", stage1.epochs},
                                {"eval", eval_json(result.stage1_eval)}});

    // Stage 2: shortcut discovery over the supervised split.
    const std::size_t spans = run_stage("discover", [&] { return discover_corpus(result.unsupervised_model, sup); });
    std::size_t docs_with_spans = 0;
    for (const auto& doc : sup) {
        docs_with_spans += doc.cached_spans->empty() ? 0 : 1;
    }
    result.span_count = spans;
    report["stages"].push_back(
        {{"stage", "discover"}, {"documents", sup.size()}, {"spans", spans}, {"documents_with_spans", docs_with_spans}});
    say("[discover] " + std::to_string(spans) + " spans in " + std::to_string(docs_with_spans) + " documents");

    // Stage 3: optional augmentation of the supervised split.
    if (config.augment != AugmentMode::kNone) {
        AugmentSummary summary;
        const auto added = run_stage("augment", [&] {
            Corpus pool_docs = sup;
            pool_docs.insert(pool_docs.end(), un.begin(), un.end());
            const std::vector<TokenId> pool = token_pool(pool_docs);
            Rng rng(config.seed ^ 0x5eed5eedULL);
            std::optional<SemanticAugmenter> semantic;
            if (config.augment != AugmentMode::kRandom) {
                semantic.emplace(result.unsupervised_model.encoder(EncoderRole::kPredictorUn), sup);
            }
            return augment_corpus(sup, config.augment, config.augment_fraction, pool,
                                  semantic ? &*semantic : nullptr, rng, &summary);
        });
        sup.insert(sup.end(), added.begin(), added.end());
        report["stages"].push_back({{"stage", "augment"},
                                    {"mode", augment_mode_name(config.augment)},
                                    {"fraction", config.augment_fraction},
                                    {"added", added.size()},
                                    {"random", summary.random},
                                    {"semantic", summary.semantic},
                                    {"fallback_positions", summary.fallback_positions}});
        say("[augment] added " + std::to_string(added.size()) + " documents");
    }

    // Stage 4: the configured mode.
    const std::string stage4 = "train_" + std::string(train_mode_name(config.mode));
    Trainer final_trainer = run_stage(stage4, [&] {
        ModelBundle init = config.stage4_init == InitMode::kWarm
                               ? result.unsupervised_model.clone()
                               : ModelBundle::create(model_dims, config.seed, config.share_imitator_head);
        Trainer t(std::move(init), config);
        t.train(sup, un, [&](const EpochStats& s) {
            std::string line = "[" + std::string(train_mode_name(config.mode)) + "] epoch " +
                               std::to_string(s.epoch) + " loss " + format_double(s.loss);
            for (const auto& [term, value] : s.terms) {
                line += " " + term + "=" + format_double(value);
            }
            say(line);
        });
        if (!config.checkpoint_path.empty()) {
            t.save(config.checkpoint_path);
        }
        return t;
    });
    result.model = final_trainer.bundle().clone();
    result.final_eval = run_stage("evaluate", [&] { return evaluate_splits(result.model, corpus, options); });
    report["stages"].push_back({{"stage", stage4},
                                {"init", init_mode_name(config.stage4_init)},
                                {"supervised_documents", sup.size()},
                                {"unsupervised_documents", un.size()},
                                {"epochs", config.epochs},
                                {"eval", eval_json(result.final_eval)}});
    result.supervised = std::move(sup);
    result.report = report.dump(2);
    return result;
}

} // namespace rforge
