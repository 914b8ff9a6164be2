#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rforge/augment.hpp"
#include "rforge/corpus.hpp"
#include "rforge/errors.hpp"
#include "rforge/metrics.hpp"
#include "rforge/optimizer.hpp"
#include "rforge/rationalizer.hpp"

namespace rforge {

enum class TrainMode { kUn, kSup, kSemi, kSsrUnif, kSsrVirt };

std::string_view train_mode_name(TrainMode mode);
TrainMode parse_train_mode(std::string_view name);
bool needs_spans(TrainMode mode);

/// How the final model of the pipeline is initialized.
enum class InitMode { kWarm, kFresh };

std::string_view init_mode_name(InitMode mode);
InitMode parse_init_mode(std::string_view name);

struct TrainConfig {
    TrainMode mode = TrainMode::kSemi;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    AdamWConfig optimizer;
    LossWeights weights;
    std::uint64_t seed = 1;
    std::size_t hidden_dim = 32;
    bool share_imitator_head = true;
    /// Longer documents are truncated.
    std::size_t max_length = 64;
    std::string checkpoint_path;
    AugmentMode augment = AugmentMode::kNone;
    double augment_fraction = 0.25;
    /// Epochs of the unsupervised model trained before shortcut discovery.
    std::size_t stage1_epochs = 30;
    InitMode stage4_init = InitMode::kFresh;

    void validate() const;

    /// Settings for a pretrained large encoder: lr 2e-5, batch 4, 30 epochs, length 512.
    static TrainConfig pretrained_profile();

    /// Flat dotted-key view, e.g. "optimizer.learning_rate" -> "0.001".
    std::map<std::string, std::string> to_key_values() const;
    /// Throws ValidationError for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
};

struct EpochStats {
    std::size_t epoch = 0;
    /// Mean per-document loss over both phases.
    double loss = 0.0;
    /// Mean of every logged loss term over the documents that produced it.
    LossLog terms;
    std::size_t sup_batches = 0;
    std::size_t un_batches = 0;
};

/// Serialized trainer state: metadata, parameters, aliases and optimizer moments.
struct Checkpoint {
    std::map<std::string, std::string> metadata;
    ModelDims dims;
    std::map<std::string, std::string> aliases;
    std::map<std::string, Tensor> parameters;
    std::map<std::string, AdamSlot> optimizer;
};

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Owns a bundle, its optimizer and the training RNG. One optimizer instance
/// spans both phases of every epoch.
class Trainer {
public:
    Trainer(ModelBundle bundle, TrainConfig config);

    /// Supervised batches first, then unsupervised batches, each as mandated by the mode.
    EpochStats train_epoch(std::span<const Document> supervised, std::span<const Document> unsupervised);

    /// Runs config().epochs epochs; `on_epoch` sees each epoch's stats.
    std::vector<EpochStats> train(std::span<const Document> supervised, std::span<const Document> unsupervised,
                                  const std::function<void(const EpochStats&)>& on_epoch = nullptr);

    ModelBundle& bundle() noexcept { return m_bundle; }
    const ModelBundle& bundle() const noexcept { return m_bundle; }
    const TrainConfig& config() const noexcept { return m_config; }
    const AdamW& optimizer() const noexcept { return m_optimizer; }
    std::size_t epochs_done() const noexcept { return m_epoch; }

    Checkpoint checkpoint() const;
    static Trainer from_checkpoint(const Checkpoint& checkpoint);
    void save(const std::filesystem::path& path) const { write_checkpoint(checkpoint(), path); }
    static Trainer load(const std::filesystem::path& path) { return from_checkpoint(read_checkpoint(path)); }

private:
    void run_phase(std::span<const Document> docs, bool supervised, EpochStats& stats, double& loss_total,
                   std::map<std::string, std::size_t>& term_counts);

    ModelBundle m_bundle;
    TrainConfig m_config;
    AdamW m_optimizer;
    Rng m_rng;
    std::size_t m_epoch = 0;
};

/// Loads only the model of a checkpoint.
ModelBundle load_model(const std::filesystem::path& path);

/// Truncates documents (and their masks and spans) to `max_length` tokens.
Corpus truncate_documents(const Corpus& corpus, std::size_t max_length);

/// A pipeline stage failed; the original error is nested.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& what)
        : Error("stage '" + stage + "' failed: " + what), m_stage(std::move(stage)) {}
    const std::string& stage() const noexcept { return m_stage; }

private:
    std::string m_stage;
};

struct PipelineOptions {
    const Vocabulary* vocabulary = nullptr;
    EvalOptions eval;
    /// Receives a line of progress text per epoch and stage.
    std::function<void(const std::string&)> progress;
};

struct PipelineResult {
    ModelBundle model;
    ModelBundle unsupervised_model;
    /// Supervised documents with cached spans, plus any augmented documents.
    Corpus supervised;
    std::size_t span_count = 0;
    /// Evaluations keyed by split name ("test", "ood_test").
    std::map<std::string, EvalReport> stage1_eval;
    std::map<std::string, EvalReport> final_eval;
    /// Machine-readable stage report (JSON).
    std::string report;
};

/// Unsupervised model on the unsupervised split, shortcut discovery over the
/// supervised split, optional augmentation, then the configured mode.
/// Evaluation runs on every test and OOD-test document in `corpus`.
PipelineResult pipeline_ssr(const Corpus& corpus, const TrainConfig& config, const PipelineOptions& options = {});

} // namespace rforge
