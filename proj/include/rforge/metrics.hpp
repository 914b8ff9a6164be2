#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rforge/corpus.hpp"
#include "rforge/rationalizer.hpp"

namespace rforge {

struct PrecisionRecall {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Micro-averaged token F1 over every position of every document; positive = "in rationale".
PrecisionRecall token_f1(std::span<const Mask> pred_masks, std::span<const Mask> gold_masks);
/// Mean of per-document token F1.
PrecisionRecall token_f1_macro(std::span<const Mask> pred_masks, std::span<const Mask> gold_masks);

/// Per-class F1 weighted by gold support.
double weighted_f1(std::span<const std::size_t> pred_labels, std::span<const std::size_t> gold_labels,
                   std::size_t num_classes);

struct Faithfulness {
    double sufficiency = 0.0;
    double comprehensiveness = 0.0;
};

/// Means over documents of p(y'|x) - p(y'|m*x) and p(y'|x) - p(y'|(1-m)*x), where
/// y' is the model's own prediction on the full input.
Faithfulness suff_comp(const ModelBundle& bundle, std::span<const Document> docs, std::span<const Mask> masks);
/// Same, using the model's evaluation-mode rationales.
Faithfulness suff_comp(const ModelBundle& bundle, std::span<const Document> docs);

enum class PredictFrom { kRationale, kFullInput };

struct EvalOptions {
    PredictFrom predict_from = PredictFrom::kRationale;
    std::optional<double> top_fraction;
    const Vocabulary* vocabulary = nullptr;
    bool macro_token_f1 = false;
};

struct EvalReport {
    std::size_t documents = 0;
    double weighted_f1 = 0.0;
    double accuracy = 0.0;
    PrecisionRecall token;
    double selected_fraction = 0.0;
    double sufficiency = 0.0;
    double comprehensiveness = 0.0;
    std::vector<std::size_t> class_support;
    /// Fraction of planted shortcut tokens that land in predicted rationales.
    std::optional<double> shortcut_inclusion_rate;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
    static std::string csv_header();
    std::string to_csv_row() const;
};

EvalReport evaluate(const ModelBundle& bundle, std::span<const Document> docs, const EvalOptions& options = {});

/// Hard rationale masks under evaluation-mode selection.
std::vector<Mask> predicted_masks(const ModelBundle& bundle, std::span<const Document> docs,
                                  std::optional<double> top_fraction = std::nullopt);

} // namespace rforge
