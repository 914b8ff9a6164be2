#include <gtest/gtest.h>

#include <cmath>

#include "rforge/errors.hpp"
#include "rforge/shortcuts.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace rforge {
namespace {

using testing::bundle_leaves;
using testing::check_gradients;
using testing::make_doc;
using testing::tiny_bundle;

using testing::as_pairs;

TEST(Discover, Examples) {
    const auto one = discover(Mask{1, 1, 1, 1, 0, 1}, Mask{0, 0, 0, 0, 0, 1}, "doc");
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0], (ShortcutSpan{"doc", 0, 4}));
    EXPECT_TRUE(discover(Mask{1, 0, 1, 1}, Mask{1, 0, 1, 1}).empty());
    EXPECT_TRUE(discover(Mask{1, 1, 0, 1, 1}, Mask{0, 0, 0, 0, 0}).empty());
    const auto gold_breaks = discover(Mask{1, 1, 1, 1, 1, 1, 1}, Mask{0, 0, 0, 1, 0, 0, 0});
    EXPECT_EQ(as_pairs(gold_breaks), (std::vector<std::pair<std::size_t, std::size_t>>{{0, 3}, {4, 7}}));
    EXPECT_THROW((void)discover(Mask{1, 1}, Mask{1}), ContractError);
}

TEST(Discover, MatchesBruteForceOnRandomMasks) {
    EXPECT_EQ(testing::discover_mismatches(404, 1000), 0u);
}

TEST(Discover, SpansAreMaximalAndDisjointFromGold) {
    Rng rng(405);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 40);
        Mask pred(n), gold(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = bernoulli(rng, 0.7) ? 1 : 0;
            gold[i] = bernoulli(rng, 0.15) ? 1 : 0;
        }
        for (const auto& s : discover(pred, gold)) {
            EXPECT_GE(s.length(), kMinShortcutRun);
            for (std::size_t i = s.start; i < s.end; ++i) {
                EXPECT_EQ(gold[i], 0);
                EXPECT_EQ(pred[i], 1);
            }
            EXPECT_TRUE(s.start == 0 || !(pred[s.start - 1] && !gold[s.start - 1]));
            EXPECT_TRUE(s.end == n || !(pred[s.end] && !gold[s.end]));
        }
    }
}

TEST(Discover, CorpusCachesSpansAndCountsThem) {
    const ModelBundle bundle = tiny_bundle();
    std::vector<Document> docs{make_doc("a", {1, 2, 3, 4, 5, 6}, 0, Mask{1, 0, 0, 0, 0, 0}),
                               make_doc("b", {6, 5, 4, 3, 2, 1}, 1, Mask{0, 0, 0, 0, 0, 1})};
    const std::size_t total = discover_corpus(bundle, docs);
    std::size_t recount = 0;
    for (const auto& doc : docs) {
        ASSERT_TRUE(doc.cached_spans.has_value());
        const auto again = discover(select_eval(bundle, doc.tokens).hard_mask, *doc.gold_mask, doc.id);
        EXPECT_EQ(*doc.cached_spans, again);
        recount += again.size();
    }
    EXPECT_EQ(total, recount);
    docs[0].gold_mask.reset();
    EXPECT_THROW((void)discover_corpus(bundle, docs), PreconditionError);
}

TEST(Discover, SpansOfRequiresDiscovery) {
    Document doc = make_doc("a", {1, 2}, 0, Mask{1, 0});
    EXPECT_THROW((void)spans_of(doc), PreconditionError);
    doc.cached_spans = std::vector<ShortcutSpan>{};
    EXPECT_TRUE(spans_of(doc).empty());
}

TEST(ShortcutMask, MarksSpanPositions) {
    const std::vector<ShortcutSpan> spans{{"", 1, 3}, {"", 4, 5}};
    EXPECT_EQ(shortcut_mask(6, spans).to_vector(), (std::vector<double>{0, 1, 1, 0, 1, 0}));
    const std::vector<ShortcutSpan> bad{{"", 2, 9}};
    EXPECT_THROW((void)shortcut_mask(6, bad), ContractError);
}

TEST(UniformKl, Values) {
    EXPECT_NEAR(uniform_kl(Tensor::vector({0.5, 0.5})).item(), 0.0, 1e-15);
    EXPECT_NEAR(uniform_kl(Tensor::vector({0.8, 0.2})).item(), 0.223144, 1e-6);
    EXPECT_NEAR(uniform_kl(Tensor::vector({0.8, 0.2})).item(),
                0.5 * std::log(0.5 / 0.8) + 0.5 * std::log(0.5 / 0.2), 1e-12);
    EXPECT_NEAR(uniform_kl(Tensor::vector({0.9, 0.1})).item(), 0.510826, 1e-6);
    const double third = 1.0 / 3.0;
    EXPECT_NEAR(uniform_kl(Tensor::vector({0.2, 0.3, 0.5})).item(),
                third * (std::log(third / 0.2) + std::log(third / 0.3) + std::log(third / 0.5)), 1e-12);
}

TEST(LossUnif, ShortcutOnlyViewOfPredictor) {
    const ModelBundle bundle = tiny_bundle();
    const Document doc = make_doc("d", {3, 5, 1, 6, 2, 7}, 1, Mask{1, 0, 0, 0, 0, 0});
    const std::vector<ShortcutSpan> spans{{"d", 2, 5}};
    const Tensor q = predict(bundle, doc.tokens, Tensor::vector({0, 0, 1, 1, 1, 0}));
    EXPECT_NEAR(loss_unif(bundle, doc, spans).item(),
                0.5 * std::log(0.5 / q.at(0)) + 0.5 * std::log(0.5 / q.at(1)), 1e-12);
    EXPECT_EQ(loss_unif(bundle, doc, {}).item(), 0.0);
    Tensor head = bundle.parameters().at("predictor_head.weight");
    std::fill(head.mutable_data().begin(), head.mutable_data().end(), 0.0);
    EXPECT_NEAR(loss_unif(bundle, doc, spans).item(), 0.0, 1e-15);
}

TEST(LossShortcut, Values) {
    const ModelBundle bundle = tiny_bundle(3, 8, 3, 3);
    const Document doc = make_doc("d", {3, 5, 1, 6, 2}, 2, Mask{1, 0, 0, 0, 0});
    const std::vector<ShortcutSpan> spans{{"d", 1, 4}};
    const Tensor q = classify(bundle.encoder(EncoderRole::kShortcut), bundle.head(HeadRole::kShortcut), doc.tokens,
                              Tensor::vector({0, 1, 1, 1, 0}));
    EXPECT_NEAR(loss_s(bundle, doc, spans).item(), -std::log(q.at(2)), 1e-12);
    EXPECT_EQ(loss_s(bundle, doc, {}).item(), 0.0);
    Tensor head = bundle.parameters().at("shortcut_head.weight");
    std::fill(head.mutable_data().begin(), head.mutable_data().end(), 0.0);
    EXPECT_NEAR(loss_s(bundle, doc, spans).item(), std::log(3.0), 1e-12);
}

TEST(LossVirt, Values) {
    EXPECT_NEAR(squared_distance(Tensor::vector({1, 0}), Tensor::vector({0, 1})).item(), 2.0, 1e-15);
    const ModelBundle bundle = tiny_bundle();
    const Document doc = make_doc("d", {3, 5, 1, 6}, 0, Mask{1, 0, 0, 0});
    const std::vector<ShortcutSpan> whole{{"d", 0, 4}};
    EXPECT_NEAR(loss_virt(bundle, doc, whole).item(), 0.0, 1e-15);
    const std::vector<ShortcutSpan> part{{"d", 1, 4}};
    const Tensor a = encode(bundle.encoder(EncoderRole::kShortcut), doc.tokens, Tensor::vector({0, 1, 1, 1})).pooled;
    const Tensor b = encode(bundle.encoder(EncoderRole::kImitator), doc.tokens).pooled;
    double expected = 0.0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
        expected += (a.at(k) - b.at(k)) * (a.at(k) - b.at(k));
    }
    EXPECT_NEAR(loss_virt(bundle, doc, part).item(), expected, 1e-12);
}

TEST(LossVirt, GradientReachesSharedEncoderFromBothRoles) {
    const ModelBundle bundle = tiny_bundle(7);
    const Document doc = make_doc("d", {3, 5, 1, 6, 2}, 0, Mask{1, 0, 0, 0, 0});
    const std::vector<ShortcutSpan> spans{{"d", 1, 4}};
    const auto leaves = bundle_leaves(bundle, {"encoder", "predictor_head", "selector_head", "shortcut_head"});
    const auto result = check_gradients([&] { return loss_virt(bundle, doc, spans); }, leaves);
    EXPECT_LE(result.worst, 1e-4) << result.worst_leaf;
}

TEST(LossDiff, MatchesScalarKlOracle) {
    const ModelBundle bundle = tiny_bundle(8, 8, 3, 2, false);
    const Document doc = make_doc("d", {3, 5, 1}, 0, Mask{1, 0, 0});
    const Tensor pooled = encode(bundle.encoder(EncoderRole::kImitator), doc.tokens).pooled;
    const Tensor head = bundle.head(HeadRole::kImitator);
    double logits[2] = {0.0, 0.0};
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t k = 0; k < 3; ++k) {
            logits[c] += head.at(c, k) * pooled.at(k);
        }
    }
    const double q0 = 1.0 / (1.0 + std::exp(logits[1] - logits[0]));
    const double expected = 0.5 * std::log(0.5 / q0) + 0.5 * std::log(0.5 / (1.0 - q0));
    EXPECT_NEAR(loss_diff(bundle, doc).item(), expected, 1e-12);
}

TEST(LossDiff, GradientReachesHeadOnly) {
    const ModelBundle bundle = tiny_bundle(9, 8, 3, 2, false);
    const Document doc = make_doc("d", {3, 5, 1, 2}, 0, Mask{1, 0, 0, 0});
    backward(loss_diff(bundle, doc));
    for (const auto& name : bundle.group_tensor_names("shortcut_encoder")) {
        const Tensor t = bundle.parameters().at(name);
        EXPECT_FALSE(t.has_grad()) << name;
    }
    EXPECT_TRUE(bundle.parameters().at("imitator_head.weight").has_grad());
    const auto result = check_gradients([&] { return loss_diff(bundle, doc); },
                                        {{"imitator_head.weight", bundle.parameters().at("imitator_head.weight")}});
    EXPECT_LE(result.worst, 1e-4);
}

TEST(SsrUnif, ZeroWeightReducesToSemi) {
    const ModelBundle bundle = tiny_bundle();
    LossWeights w;
    w.lambda_unif = 0.0;
    Document doc = make_doc("d", {3, 5, 1, 6, 2}, 1, Mask{1, 0, 0, 0, 0});
    doc.cached_spans = std::vector<ShortcutSpan>{{"d", 1, 4}};
    EXPECT_EQ(ssr_unif_supervised_loss(bundle, doc, w).item(), loss_sup(bundle, doc, w).item());
}

TEST(SsrUnif, BatchEqualsSumOfTerms) {
    const ModelBundle bundle = tiny_bundle();
    LossWeights w;
    w.lambda_unif = 0.7;
    Document s1 = make_doc("s1", {3, 5, 1, 6, 2}, 1, Mask{1, 0, 0, 0, 0});
    s1.cached_spans = std::vector<ShortcutSpan>{{"s1", 1, 4}};
    Document s2 = make_doc("s2", {2, 2, 4, 7}, 0, Mask{0, 0, 1, 0});
    s2.cached_spans = std::vector<ShortcutSpan>{};
    const Document u = make_doc("u", {6, 1, 3, 3}, 0, Mask{0, 0, 0, 1}, Split::kUn);
    const std::vector<Document> sup{s1, s2}, un{u};
    Rng a(3), b(3);
    const double batch = loss_ssr_unif_step(bundle, sup, un, w, a).item();
    double parts = 0.0;
    for (const auto& d : sup) {
        parts += loss_sup(bundle, d, w).item() + w.lambda_unif * loss_unif(bundle, d, *d.cached_spans).item();
    }
    parts += loss_un(bundle, u, w, b).item();
    EXPECT_NEAR(batch, parts, 1e-12);
}

TEST(SsrUnif, MicroBatchGradient) {
    const ModelBundle bundle = tiny_bundle(10);
    LossWeights w;
    w.lambda_unif = 0.5;
    Document s1 = make_doc("s1", {3, 5, 1, 6, 2}, 1, Mask{1, 0, 0, 0, 0});
    s1.cached_spans = std::vector<ShortcutSpan>{{"s1", 1, 4}};
    const Document u = make_doc("u", {6, 1, 3, 4}, 0, Mask{0, 0, 0, 1}, Split::kUn);
    const std::vector<Document> sup{s1}, un{u};
    const auto result = check_gradients(
        [&] {
            Rng rng(12);
            return loss_ssr_unif_step(bundle, sup, un, w, rng);
        },
        bundle_leaves(bundle));
    EXPECT_LE(result.worst, 1e-4) << result.worst_leaf;
}

TEST(SsrVirt, ZeroWeightsWithoutShortcutLossReduceToSemi) {
    const ModelBundle bundle = tiny_bundle();
    LossWeights w;
    w.lambda_virt = 0.0;
    w.lambda_diff = 0.0;
    Document doc = make_doc("d", {3, 5, 1, 6, 2}, 1, Mask{1, 0, 0, 0, 0});
    doc.cached_spans = std::vector<ShortcutSpan>{{"d", 1, 4}};
    const double sup = ssr_virt_supervised_loss(bundle, doc, w).item();
    EXPECT_NEAR(sup - loss_s(bundle, doc, *doc.cached_spans).item(), loss_sup(bundle, doc, w).item(), 1e-12);
    Rng a(5), b(5);
    EXPECT_EQ(ssr_virt_unsupervised_loss(bundle, doc, w, a).item(), loss_un(bundle, doc, w, b).item());
}

TEST(SsrVirt, BatchEqualsSumOfTerms) {
    const ModelBundle bundle = tiny_bundle();
    LossWeights w;
    Document s1 = make_doc("s1", {3, 5, 1, 6, 2}, 1, Mask{1, 0, 0, 0, 0});
    s1.cached_spans = std::vector<ShortcutSpan>{{"s1", 1, 4}};
    const Document u = make_doc("u", {6, 1, 3, 4}, 0, Mask{0, 0, 0, 1}, Split::kUn);
    const std::vector<Document> sup{s1}, un{u};
    Rng a(3), b(3);
    const double batch = loss_ssr_virt_step(bundle, sup, un, w, a).item();
    const auto spans = *s1.cached_spans;
    const double parts = loss_sup(bundle, s1, w).item() + loss_s(bundle, s1, spans).item() +
                         w.lambda_virt * loss_virt(bundle, s1, spans).item() + loss_un(bundle, u, w, b).item() +
                         w.lambda_diff * loss_diff(bundle, u).item();
    EXPECT_NEAR(batch, parts, 1e-12);
}

TEST(SsrVirt, MicroBatchGradient) {
    const ModelBundle bundle = tiny_bundle(11, 8, 3, 2, false);
    LossWeights w;
    w.lambda_virt = 0.4;
    w.lambda_diff = 0.3;
    Document s1 = make_doc("s1", {3, 5, 1, 6, 2}, 1, Mask{1, 0, 0, 0, 0});
    s1.cached_spans = std::vector<ShortcutSpan>{{"s1", 1, 4}};
    const std::vector<Document> sup{s1};
    const auto sup_result = check_gradients(
        [&] { return ssr_virt_supervised_loss(bundle, s1, w); }, bundle_leaves(bundle));
    EXPECT_LE(sup_result.worst, 1e-4) << sup_result.worst_leaf;

    // The unsupervised phase treats the imitator encoder as a constant.
    const Document u = make_doc("u", {6, 1, 3, 4}, 0, Mask{0, 0, 0, 1}, Split::kUn);
    const std::vector<Document> un{u};
    const auto un_result = check_gradients(
        [&] {
            Rng rng(13);
            return loss_ssr_virt_step(bundle, {}, un, w, rng);
        },
        bundle_leaves(bundle, {"shortcut_encoder"}));
    EXPECT_LE(un_result.worst, 1e-4) << un_result.worst_leaf;
}

} // namespace
} // namespace rforge
