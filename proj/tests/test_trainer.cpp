#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "rforge/errors.hpp"
#include "rforge/shortcuts.hpp"
#include "rforge/trainer.hpp"
#include "support.hpp"

namespace rforge {
namespace {

namespace fs = std::filesystem;
using testing::make_doc;
using testing::tiny_bundle;

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("rforge_trainer_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::map<std::string, std::vector<double>> snapshot(const ModelBundle& bundle) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : bundle.parameters()) {
        out[name] = t.to_vector();
    }
    return out;
}

std::map<std::string, std::vector<double>> group_snapshot(const ModelBundle& bundle, const std::string& group) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& name : bundle.group_tensor_names(group)) {
        out[name] = bundle.parameters().at(name).to_vector();
    }
    return out;
}

/// Small labeled and unlabeled sets with spans on the supervised side.
struct Fixture {
    std::vector<Document> sup;
    std::vector<Document> un;
};

Fixture fixture(std::size_t n_sup = 6, std::size_t n_un = 8) {
    Fixture f;
    Rng rng(42);
    for (std::size_t i = 0; i < n_sup + n_un; ++i) {
        const std::size_t label = i % 2;
        std::vector<TokenId> tokens;
        Mask gold;
        for (std::size_t k = 0; k < 7; ++k) {
            tokens.push_back(static_cast<TokenId>(1 + uniform_index(rng, 9)));
            gold.push_back(k == 2 ? 1 : 0);
        }
        tokens[2] = static_cast<TokenId>(1 + label);
        Document d = make_doc("d" + std::to_string(i), tokens, label, gold, i < n_sup ? Split::kSup : Split::kUn);
        if (i < n_sup) {
            d.cached_spans = std::vector<ShortcutSpan>{{d.id, 3, 6}};
            f.sup.push_back(std::move(d));
        } else {
            d.gold_mask.reset();
            f.un.push_back(std::move(d));
        }
    }
    return f;
}

TrainConfig small_config(TrainMode mode) {
    TrainConfig c;
    c.mode = mode;
    c.epochs = 2;
    c.batch_size = 3;
    c.hidden_dim = 3;
    c.optimizer.learning_rate = 0.05;
    c.seed = 9;
    return c;
}

ModelBundle small_bundle(bool share_head = true) { return ModelBundle::create({10, 3, 2}, 4, share_head); }

TEST(AdamW, HandComputedFirstStep) {
    ModelBundle bundle = small_bundle();
    Tensor bias = bundle.parameters().at("encoder.mix_bias");
    bias.mutable_data()[0] = 1.0;
    bias.mutable_grad()[0] = 1.0;
    AdamWConfig config;
    config.learning_rate = 0.1;
    config.weight_decay = 0.0;
    AdamW opt(config);
    const std::vector<std::string> names{"encoder.mix_bias"};
    opt.step(bundle, names);
    EXPECT_NEAR(bias.at(0), 1.0 - 0.1 * 1.0 / (1.0 + 1e-8), 1e-15);
    EXPECT_NEAR(bias.at(0), 0.9, 1e-7);
    EXPECT_FALSE(bias.has_grad());
    EXPECT_EQ(opt.state().at("encoder.mix_bias").steps, 1u);
}

TEST(AdamW, DecoupledDecayWithZeroGradient) {
    ModelBundle bundle = small_bundle();
    Tensor bias = bundle.parameters().at("encoder.mix_bias");
    const std::vector<double> before = bias.to_vector();
    bias.mutable_grad();
    AdamWConfig config;
    config.learning_rate = 0.1;
    config.weight_decay = 0.5;
    AdamW opt(config);
    const std::vector<std::string> names{"encoder.mix_bias"};
    opt.step(bundle, names);
    for (std::size_t i = 0; i < before.size(); ++i) {
        EXPECT_DOUBLE_EQ(bias.at(i), before[i] - 0.1 * 0.5 * before[i]);
    }
}

TEST(AdamW, SecondStepUsesBiasCorrection) {
    ModelBundle bundle = small_bundle();
    Tensor bias = bundle.parameters().at("encoder.mix_bias");
    bias.mutable_data()[0] = 0.0;
    AdamWConfig config;
    config.learning_rate = 0.01;
    config.weight_decay = 0.0;
    AdamW opt(config);
    const std::vector<std::string> names{"encoder.mix_bias"};
    double m = 0.0, v = 0.0, w = 0.0;
    for (int t = 1; t <= 3; ++t) {
        const double g = 0.5 * t;
        bias.mutable_grad()[0] = g;
        opt.step(bundle, names);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        EXPECT_NEAR(bias.at(0), w, 1e-15);
    }
}

TEST(AdamW, AliasedTensorUpdatedOnceFromSummedGrads) {
    ModelBundle bundle = small_bundle();
    const Document doc = make_doc("d", {1, 2, 3, 4}, 1, Mask{0, 1, 0, 0}, Split::kSup);
    // Selector and predictor roles both read the shared encoder.
    backward(loss_sup(bundle, doc, {}));
    const Tensor emb = bundle.parameters().at("encoder.embedding");
    const std::vector<double> grad(emb.grad().begin(), emb.grad().end());
    AdamW opt;
    const std::vector<std::string> names{"encoder.embedding"};
    opt.step(bundle, names);
    EXPECT_EQ(opt.state().size(), 1u);
    EXPECT_EQ(opt.state().at("encoder.embedding").steps, 1u);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        EXPECT_NEAR(opt.state().at("encoder.embedding").m[i], (1.0 - 0.9) * grad[i], 0.0);
    }
}

TEST(AdamW, MissingGradOrUnknownNameIsContractError) {
    ModelBundle bundle = small_bundle();
    AdamW opt;
    const std::vector<std::string> missing{"encoder.mix_bias"};
    EXPECT_THROW(opt.step(bundle, missing), ContractError);
    const std::vector<std::string> unknown{"nope.weight"};
    EXPECT_THROW(opt.step(bundle, unknown), ContractError);
    AdamWConfig bad;
    bad.beta1 = 1.0;
    EXPECT_THROW(bad.validate(), SpecError);
}

TEST(TrainConfig, KeyValuesRoundTrip) {
    TrainConfig c;
    c.mode = TrainMode::kSsrVirt;
    c.optimizer.learning_rate = 0.003;
    c.weights.lambda_unif = 2.5;
    c.weights.straight_through_predictor = true;
    c.augment = AugmentMode::kMixed;
    c.stage4_init = InitMode::kWarm;
    c.share_imitator_head = false;
    TrainConfig back;
    for (const auto& [k, v] : c.to_key_values()) {
        back.set(k, v);
    }
    EXPECT_EQ(back.to_key_values(), c.to_key_values());
    EXPECT_EQ(back.optimizer, c.optimizer);
    EXPECT_EQ(back.weights.lambda_unif, 2.5);
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
    TrainConfig c;
    EXPECT_THROW(c.set("loss.lambda_nothing", "1"), ValidationError);
    EXPECT_THROW(c.set("epochs", "many"), ValidationError);
    EXPECT_THROW(c.set("epochs", "-3"), ValidationError);
    EXPECT_THROW(c.set("mode", "supervisedish"), ValidationError);
    EXPECT_THROW(c.set("model.share_imitator_head", "perhaps"), ValidationError);
    EXPECT_THROW(c.set("pipeline.stage4_init", "lukewarm"), ValidationError);
    c.set("batch_size", "0");
    EXPECT_THROW(c.validate(), SpecError);
}

TEST(TrainConfig, PretrainedProfile) {
    const TrainConfig p = TrainConfig::pretrained_profile();
    EXPECT_EQ(p.optimizer.learning_rate, 2e-5);
    EXPECT_EQ(p.batch_size, 4u);
    EXPECT_EQ(p.epochs, 30u);
    EXPECT_EQ(p.max_length, 512u);
}

TEST(TrainModes, NamesRoundTrip) {
    for (auto m : {TrainMode::kUn, TrainMode::kSup, TrainMode::kSemi, TrainMode::kSsrUnif, TrainMode::kSsrVirt}) {
        EXPECT_EQ(parse_train_mode(train_mode_name(m)), m);
    }
    EXPECT_TRUE(needs_spans(TrainMode::kSsrUnif));
    EXPECT_TRUE(needs_spans(TrainMode::kSsrVirt));
    EXPECT_FALSE(needs_spans(TrainMode::kSemi));
}

TEST(Trainer, SemiEqualsSupervisedThenUnsupervisedByHand) {
    const Fixture f = fixture();
    const TrainConfig config = small_config(TrainMode::kSemi);
    Trainer trainer(small_bundle(), config);
    trainer.train_epoch(f.sup, f.un);

    ModelBundle manual = small_bundle();
    AdamW opt(config.optimizer);
    Rng rng(config.seed);
    const auto run = [&](const std::vector<Document>& docs, bool supervised) {
        std::vector<std::size_t> order(docs.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            Tensor total = Tensor::scalar(0.0);
            for (std::size_t k = start; k < end; ++k) {
                const Document& d = docs[order[k]];
                total = add(total, supervised ? loss_sup(manual, d, config.weights)
                                              : loss_un(manual, d, config.weights, rng));
            }
            backward(scale(total, 1.0 / static_cast<double>(end - start)));
            std::vector<std::string> names;
            for (const auto& [name, t] : manual.parameters()) {
                if (t.has_grad()) {
                    names.push_back(name);
                }
            }
            opt.step(manual, names);
        }
    };
    run(f.sup, true);
    run(f.un, false);
    EXPECT_EQ(snapshot(trainer.bundle()), snapshot(manual));
}

TEST(Trainer, FixedSeedReproducesLossTrajectory) {
    const Fixture f = fixture();
    for (auto mode : {TrainMode::kUn, TrainMode::kSup, TrainMode::kSemi, TrainMode::kSsrUnif, TrainMode::kSsrVirt}) {
        Trainer a(small_bundle(), small_config(mode));
        Trainer b(small_bundle(), small_config(mode));
        const auto ha = a.train(f.sup, f.un);
        const auto hb = b.train(f.sup, f.un);
        ASSERT_EQ(ha.size(), hb.size());
        for (std::size_t e = 0; e < ha.size(); ++e) {
            EXPECT_EQ(ha[e].loss, hb[e].loss) << train_mode_name(mode);
            EXPECT_EQ(ha[e].terms, hb[e].terms);
        }
        EXPECT_EQ(snapshot(a.bundle()), snapshot(b.bundle()));
    }
}

TEST(Trainer, EpochStatsDescribePhases) {
    const Fixture f = fixture(6, 8);
    Trainer semi(small_bundle(), small_config(TrainMode::kSemi));
    const EpochStats s = semi.train_epoch(f.sup, f.un);
    EXPECT_EQ(s.epoch, 1u);
    EXPECT_EQ(s.sup_batches, 2u);
    EXPECT_EQ(s.un_batches, 3u);
    EXPECT_TRUE(s.terms.count("select"));
    EXPECT_TRUE(s.terms.count("un_task"));
    Trainer un(small_bundle(), small_config(TrainMode::kUn));
    const EpochStats u = un.train_epoch(f.sup, f.un);
    EXPECT_EQ(u.sup_batches, 0u);
    EXPECT_FALSE(u.terms.count("select"));
    Trainer sup(small_bundle(), small_config(TrainMode::kSup));
    EXPECT_EQ(sup.train_epoch(f.sup, f.un).un_batches, 0u);
    Trainer unif(small_bundle(), small_config(TrainMode::kSsrUnif));
    EXPECT_TRUE(unif.train_epoch(f.sup, f.un).terms.count("unif"));
    Trainer virt(small_bundle(), small_config(TrainMode::kSsrVirt));
    const EpochStats v = virt.train_epoch(f.sup, f.un);
    EXPECT_TRUE(v.terms.count("virt") && v.terms.count("diff") && v.terms.count("shortcut"));
}

TEST(Trainer, SsrModesNeedDiscoveredSpans) {
    Fixture f = fixture();
    f.sup[1].cached_spans.reset();
    for (auto mode : {TrainMode::kSsrUnif, TrainMode::kSsrVirt}) {
        Trainer t(small_bundle(), small_config(mode));
        try {
            t.train_epoch(f.sup, f.un);
            FAIL() << "expected PreconditionError";
        } catch (const PreconditionError& e) {
            EXPECT_NE(std::string(e.what()).find("discover"), std::string::npos);
        }
    }
    Trainer semi(small_bundle(), small_config(TrainMode::kSemi));
    EXPECT_NO_THROW(semi.train_epoch(f.sup, f.un));
}

TEST(Trainer, AliasesStayBitIdenticalAfterEveryStep) {
    const Fixture f = fixture();
    TrainConfig config = small_config(TrainMode::kSsrVirt);
    config.epochs = 1;
    Trainer t(small_bundle(), config);
    for (int epoch = 0; epoch < 3; ++epoch) {
        t.train_epoch(f.sup, f.un);
        const ModelBundle& b = t.bundle();
        const EncoderParams ref = b.encoder(EncoderRole::kSelectorUn);
        for (auto role : {EncoderRole::kPredictorUn, EncoderRole::kSelectorSup, EncoderRole::kPredictorSup}) {
            EXPECT_TRUE(b.encoder(role).embedding.same_storage(ref.embedding));
            EXPECT_EQ(b.encoder(role).embedding.to_vector(), ref.embedding.to_vector());
        }
        EXPECT_EQ(b.encoder(EncoderRole::kShortcut).mix_weight.to_vector(),
                  b.encoder(EncoderRole::kImitator).mix_weight.to_vector());
        EXPECT_EQ(b.head(HeadRole::kImitator).to_vector(), b.head(HeadRole::kPredictorSup).to_vector());
    }
}

TEST(Trainer, VirtUnsupervisedPhaseFreezesImitator) {
    const Fixture f = fixture();
    for (bool share : {true, false}) {
        Trainer t(small_bundle(share), small_config(TrainMode::kSsrVirt));
        const auto imitator_before = group_snapshot(t.bundle(), "shortcut_encoder");
        const std::string head_group = share ? "predictor_head" : "imitator_head";
        const auto head_before = group_snapshot(t.bundle(), head_group);
        t.train_epoch({}, f.un);
        EXPECT_EQ(group_snapshot(t.bundle(), "shortcut_encoder"), imitator_before);
        EXPECT_NE(group_snapshot(t.bundle(), head_group), head_before);
        EXPECT_FALSE(t.bundle().imitator_frozen());
        t.train_epoch(f.sup, {});
        EXPECT_NE(group_snapshot(t.bundle(), "shortcut_encoder"), imitator_before);
    }
}

void expect_same_checkpoint(const Checkpoint& a, const Checkpoint& b) {
    EXPECT_EQ(a.metadata, b.metadata);
    EXPECT_EQ(a.dims, b.dims);
    EXPECT_EQ(a.aliases, b.aliases);
    ASSERT_EQ(a.parameters.size(), b.parameters.size());
    for (const auto& [name, t] : a.parameters) {
        const auto x = t.to_vector();
        const auto y = b.parameters.at(name).to_vector();
        ASSERT_EQ(x.size(), y.size());
        EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)), 0) << name;
        EXPECT_EQ(t.shape(), b.parameters.at(name).shape());
    }
    EXPECT_EQ(a.optimizer, b.optimizer);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    const fs::path dir = scratch_dir("roundtrip");
    const Fixture f = fixture();
    Trainer t(small_bundle(false), small_config(TrainMode::kSsrVirt));
    t.train(f.sup, f.un);
    t.save(dir / "a.ckpt");
    const Trainer back = Trainer::load(dir / "a.ckpt");
    expect_same_checkpoint(t.checkpoint(), back.checkpoint());
    back.save(dir / "b.ckpt");
    std::ifstream a(dir / "a.ckpt", std::ios::binary), b(dir / "b.ckpt", std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(a)), {}), bytes_b((std::istreambuf_iterator<char>(b)), {});
    EXPECT_EQ(bytes_a, bytes_b);
    EXPECT_EQ(back.epochs_done(), 2u);
    EXPECT_FALSE(back.bundle().imitator_head_shared());
    EXPECT_TRUE(back.bundle().encoder(EncoderRole::kSelectorUn).embedding.same_storage(
        back.bundle().encoder(EncoderRole::kPredictorSup).embedding));
}

TEST(Checkpoint, ResumedTrainingMatchesUninterrupted) {
    const fs::path dir = scratch_dir("resume");
    const Fixture f = fixture();
    TrainConfig config = small_config(TrainMode::kSsrUnif);
    config.epochs = 1;
    Trainer straight(small_bundle(), config);
    straight.train_epoch(f.sup, f.un);
    straight.train_epoch(f.sup, f.un);

    Trainer first(small_bundle(), config);
    first.train_epoch(f.sup, f.un);
    first.save(dir / "mid.ckpt");
    Trainer resumed = Trainer::load(dir / "mid.ckpt");
    resumed.train_epoch(f.sup, f.un);
    EXPECT_EQ(snapshot(resumed.bundle()), snapshot(straight.bundle()));
}

TEST(Checkpoint, CorruptFilesAreParseErrors) {
    const fs::path dir = scratch_dir("corrupt");
    Trainer t(small_bundle(), small_config(TrainMode::kSemi));
    t.save(dir / "ok.ckpt");
    std::ifstream in(dir / "ok.ckpt", std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    std::ofstream(dir / "magic.ckpt", std::ios::binary) << "JUNK" << bytes.substr(4);
    EXPECT_THROW((void)read_checkpoint(dir / "short.ckpt"), ParseError);
    EXPECT_THROW((void)read_checkpoint(dir / "magic.ckpt"), ParseError);
    EXPECT_THROW((void)read_checkpoint(dir / "missing.ckpt"), ValidationError);
    EXPECT_EQ(snapshot(load_model(dir / "ok.ckpt")), snapshot(t.bundle()));
}

Corpus pipeline_corpus() {
    GeneratorSpec spec;
    spec.train_docs = 120;
    spec.test_docs = 30;
    spec.ood_docs = 30;
    spec.doc_length = 16;
    spec.rationale_tokens = 3;
    spec.max_conflicting_tokens = 1;
    spec.rationale_vocab = 6;
    spec.shortcut_vocab = 6;
    spec.filler_vocab = 12;
    const Corpus all = generate(spec);
    auto [sup, un] = split_labeled_fraction(all, 0.25, 3);
    Corpus out = sup;
    out.insert(out.end(), un.begin(), un.end());
    for (const auto& d : all) {
        if (d.split == Split::kTest || d.split == Split::kOodTest) {
            out.push_back(d);
        }
    }
    return out;
}

TrainConfig pipeline_config() {
    TrainConfig c;
    c.mode = TrainMode::kSsrUnif;
    c.epochs = 2;
    c.stage1_epochs = 2;
    c.hidden_dim = 4;
    c.optimizer.learning_rate = 0.01;
    return c;
}

TEST(Pipeline, WarmStartWithZeroEpochsKeepsStageOneEvaluation) {
    TrainConfig c = pipeline_config();
    c.epochs = 0;
    c.stage4_init = InitMode::kWarm;
    const PipelineResult r = pipeline_ssr(pipeline_corpus(), c);
    ASSERT_EQ(r.final_eval.size(), 2u);
    for (const auto& [split, report] : r.final_eval) {
        EXPECT_EQ(report.to_json(), r.stage1_eval.at(split).to_json()) << split;
    }
}

TEST(Pipeline, SpanCountMatchesRecount) {
    const PipelineResult r = pipeline_ssr(pipeline_corpus(), pipeline_config());
    std::size_t cached = 0;
    Corpus sup = r.supervised;
    for (const auto& d : sup) {
        cached += d.cached_spans->size();
    }
    EXPECT_EQ(cached, r.span_count);
    EXPECT_EQ(discover_corpus(r.unsupervised_model, sup), r.span_count);
    const auto report = nlohmann::json::parse(r.report);
    EXPECT_EQ(report.at("stages").at(1).at("spans").get<std::size_t>(), r.span_count);
}

TEST(Pipeline, DisabledAugmentationLeavesSupervisedSetUntouched) {
    const Corpus corpus = pipeline_corpus();
    const PipelineResult r = pipeline_ssr(corpus, pipeline_config());
    Corpus expected = filter_split(corpus, Split::kSup);
    discover_corpus(r.unsupervised_model, expected);
    EXPECT_EQ(r.supervised, expected);

    TrainConfig mixed = pipeline_config();
    mixed.augment = AugmentMode::kMixed;
    const PipelineResult a = pipeline_ssr(corpus, mixed);
    EXPECT_EQ(a.supervised.size(), expected.size() + static_cast<std::size_t>(std::llround(0.25 * expected.size())));
}

TEST(Pipeline, FixedSeedIsReproducible) {
    const Corpus corpus = pipeline_corpus();
    TrainConfig c = pipeline_config();
    c.mode = TrainMode::kSsrVirt;
    c.augment = AugmentMode::kMixed;
    const PipelineResult a = pipeline_ssr(corpus, c);
    const PipelineResult b = pipeline_ssr(corpus, c);
    EXPECT_EQ(a.report, b.report);
    EXPECT_EQ(snapshot(a.model), snapshot(b.model));
}

TEST(Pipeline, StageFailuresNestTheCause) {
    Corpus corpus = pipeline_corpus();
    for (auto& d : corpus) {
        if (d.split == Split::kSup) {
            d.gold_mask.reset();
            break;
        }
    }
    try {
        (void)pipeline_ssr(corpus, pipeline_config());
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "discover");
        EXPECT_THROW(std::rethrow_if_nested(e), PreconditionError);
    }
}

} // namespace
} // namespace rforge
