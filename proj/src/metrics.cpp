#include "rforge/metrics.hpp"

#include <algorithm>
#include <sstream>

#include <json.hpp>

#include "rforge/errors.hpp"

namespace rforge {

using json = nlohmann::ordered_json;

namespace {

PrecisionRecall from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    PrecisionRecall out;
    out.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    out.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double denom = out.precision + out.recall;
    out.f1 = denom == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / denom;
    return out;
}

void count(const Mask& pred, const Mask& gold, std::size_t& tp, std::size_t& fp, std::size_t& fn) {
    if (pred.size() != gold.size()) {
        throw DimensionError("token_f1: predicted mask of " + std::to_string(pred.size()) + " vs gold mask of " +
                             std::to_string(gold.size()));
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        tp += (pred[i] && gold[i]) ? 1 : 0;
        fp += (pred[i] && !gold[i]) ? 1 : 0;
        fn += (!pred[i] && gold[i]) ? 1 : 0;
    }
}

void require_paired(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw DimensionError(std::string(what) + ": " + std::to_string(a) + " predictions vs " + std::to_string(b) +
                             " references");
    }
}

std::size_t argmax(std::span<const double> values) {
    return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

Tensor masked_view(const Document& doc, const Mask& mask, bool complement) {
    std::vector<double> m(doc.tokens.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const bool live = doc.tokens[i] != kPadId;
        const bool keep = complement ? !mask[i] : mask[i] != 0;
        m[i] = (live && keep) ? 1.0 : 0.0;
    }
    return Tensor::vector(std::move(m));
}

} // namespace

PrecisionRecall token_f1(std::span<const Mask> pred_masks, std::span<const Mask> gold_masks) {
    require_paired(pred_masks.size(), gold_masks.size(), "token_f1");
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t d = 0; d < pred_masks.size(); ++d) {
        count(pred_masks[d], gold_masks[d], tp, fp, fn);
    }
    return from_counts(tp, fp, fn);
}

PrecisionRecall token_f1_macro(std::span<const Mask> pred_masks, std::span<const Mask> gold_masks) {
    require_paired(pred_masks.size(), gold_masks.size(), "token_f1_macro");
    PrecisionRecall total;
    if (pred_masks.empty()) {
        return total;
    }
    for (std::size_t d = 0; d < pred_masks.size(); ++d) {
        std::size_t tp = 0, fp = 0, fn = 0;
        count(pred_masks[d], gold_masks[d], tp, fp, fn);
        const PrecisionRecall one = from_counts(tp, fp, fn);
        total.precision += one.precision;
        total.recall += one.recall;
        total.f1 += one.f1;
    }
    const auto n = static_cast<double>(pred_masks.size());
    total.precision /= n;
    total.recall /= n;
    total.f1 /= n;
    return total;
}

double weighted_f1(std::span<const std::size_t> pred_labels, std::span<const std::size_t> gold_labels,
                   std::size_t num_classes) {
    require_paired(pred_labels.size(), gold_labels.size(), "weighted_f1");
    if (gold_labels.empty()) {
        return 0.0;
    }
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0), support(num_classes, 0);
    for (std::size_t i = 0; i < gold_labels.size(); ++i) {
        const std::size_t g = gold_labels[i], p = pred_labels[i];
        if (g >= num_classes || p >= num_classes) {
            throw LabelError("weighted_f1: label out of range for " + std::to_string(num_classes) + " classes");
        }
        ++support[g];
        if (g == p) {
            ++tp[g];
        } else {
            ++fp[p];
            ++fn[g];
        }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        total += static_cast<double>(support[c]) * from_counts(tp[c], fp[c], fn[c]).f1;
    }
    return total / static_cast<double>(gold_labels.size());
}

Faithfulness suff_comp(const ModelBundle& bundle, std::span<const Document> docs, std::span<const Mask> masks) {
    require_paired(masks.size(), docs.size(), "suff_comp");
    NoGradGuard no_grad;
    Faithfulness out;
    if (docs.empty()) {
        return out;
    }
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const Document& doc = docs[d];
        if (masks[d].size() != doc.tokens.size()) {
            throw DimensionError("suff_comp: mask length mismatch for document '" + doc.id + "'");
        }
        const Tensor full = predict(bundle, doc.tokens);
        const std::size_t y = argmax(full.data());
        const double p_full = full.at(y);
        const double p_kept = predict(bundle, doc.tokens, masked_view(doc, masks[d], false)).at(y);
        const double p_removed = predict(bundle, doc.tokens, masked_view(doc, masks[d], true)).at(y);
        out.sufficiency += p_full - p_kept;
        out.comprehensiveness += p_full - p_removed;
    }
    out.sufficiency /= static_cast<double>(docs.size());
    out.comprehensiveness /= static_cast<double>(docs.size());
    return out;
}

Faithfulness suff_comp(const ModelBundle& bundle, std::span<const Document> docs) {
    const auto masks = predicted_masks(bundle, docs);
    return suff_comp(bundle, docs, masks);
}

std::vector<Mask> predicted_masks(const ModelBundle& bundle, std::span<const Document> docs,
                                  std::optional<double> top_fraction) {
    NoGradGuard no_grad;
    std::vector<Mask> out;
    out.reserve(docs.size());
    for (const auto& doc : docs) {
        out.push_back(select_eval(bundle, doc.tokens, top_fraction).hard_mask);
    }
    return out;
}

EvalReport evaluate(const ModelBundle& bundle, std::span<const Document> docs, const EvalOptions& options) {
    NoGradGuard no_grad;
    EvalReport report;
    report.documents = docs.size();
    const std::size_t classes = bundle.dims().num_classes;
    report.class_support.assign(classes, 0);
    if (docs.empty()) {
        return report;
    }

    const std::vector<Mask> masks = predicted_masks(bundle, docs, options.top_fraction);
    std::vector<std::size_t> pred_labels, gold_labels;
    std::vector<Mask> pred_with_gold, gold;
    std::size_t selected = 0, live_total = 0, planted = 0, planted_hit = 0, correct = 0;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const Document& doc = docs[d];
        if (doc.label >= classes) {
            throw LabelError("evaluate: document '" + doc.id + "' has label " + std::to_string(doc.label));
        }
        const Tensor probs = options.predict_from == PredictFrom::kRationale
                                 ? predict(bundle, doc.tokens, masked_view(doc, masks[d], false))
                                 : predict(bundle, doc.tokens);
        const std::size_t y = argmax(probs.data());
        pred_labels.push_back(y);
        gold_labels.push_back(doc.label);
        correct += y == doc.label ? 1 : 0;
        ++report.class_support[doc.label];

        for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
            if (doc.tokens[i] == kPadId) {
                continue;
            }
            ++live_total;
            selected += masks[d][i];
            if (options.vocabulary != nullptr && options.vocabulary->is_shortcut(doc.tokens[i])) {
                ++planted;
                planted_hit += masks[d][i];
            }
        }
        if (doc.gold_mask) {
            pred_with_gold.push_back(masks[d]);
            gold.push_back(*doc.gold_mask);
        }
    }
    report.weighted_f1 = weighted_f1(pred_labels, gold_labels, classes);
    report.accuracy = static_cast<double>(correct) / static_cast<double>(docs.size());
    report.token = options.macro_token_f1 ? token_f1_macro(pred_with_gold, gold) : token_f1(pred_with_gold, gold);
    report.selected_fraction = live_total == 0 ? 0.0 : static_cast<double>(selected) / static_cast<double>(live_total);
    const Faithfulness faith = suff_comp(bundle, docs, masks);
    report.sufficiency = faith.sufficiency;
    report.comprehensiveness = faith.comprehensiveness;
    if (options.vocabulary != nullptr) {
        report.shortcut_inclusion_rate =
            planted == 0 ? 0.0 : static_cast<double>(planted_hit) / static_cast<double>(planted);
    }
    return report;
}

std::string EvalReport::to_json() const {
    json j;
    j["documents"] = documents;
    j["weighted_f1"] = weighted_f1;
    j["accuracy"] = accuracy;
    j["token_precision"] = token.precision;
    j["token_recall"] = token.recall;
    j["token_f1"] = token.f1;
    j["selected_fraction"] = selected_fraction;
    j["sufficiency"] = sufficiency;
    j["comprehensiveness"] = comprehensiveness;
    j["class_support"] = class_support;
    j["shortcut_inclusion_rate"] = shortcut_inclusion_rate ? json(*shortcut_inclusion_rate) : json(nullptr);
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
        EvalReport r;
        r.documents = j.at("documents").get<std::size_t>();
        r.weighted_f1 = j.at("weighted_f1").get<double>();
        r.accuracy = j.at("accuracy").get<double>();
        r.token.precision = j.at("token_precision").get<double>();
        r.token.recall = j.at("token_recall").get<double>();
        r.token.f1 = j.at("token_f1").get<double>();
        r.selected_fraction = j.at("selected_fraction").get<double>();
        r.sufficiency = j.at("sufficiency").get<double>();
        r.comprehensiveness = j.at("comprehensiveness").get<double>();
        r.class_support = j.at("class_support").get<std::vector<std::size_t>>();
        if (!j.at("shortcut_inclusion_rate").is_null()) {
            r.shortcut_inclusion_rate = j.at("shortcut_inclusion_rate").get<double>();
        }
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("eval report: ") + e.what(), 0);
    }
}

std::string EvalReport::csv_header() {
    return "documents,weighted_f1,accuracy,token_precision,token_recall,token_f1,selected_fraction,sufficiency,"
           "comprehensiveness,shortcut_inclusion_rate";
}

std::string EvalReport::to_csv_row() const {
    std::ostringstream out;
    out.precision(17);
    out << documents << ',' << weighted_f1 << ',' << accuracy << ',' << token.precision << ',' << token.recall << ','
        << token.f1 << ',' << selected_fraction << ',' << sufficiency << ',' << comprehensiveness << ',';
    if (shortcut_inclusion_rate) {
        out << *shortcut_inclusion_rate;
    }
    return out.str();
}

} // namespace rforge
