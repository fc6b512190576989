#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "detlab/autodiff/optim.hpp"
#include "detlab/data.hpp"
#include "detlab/eval.hpp"
#include "detlab/losses.hpp"
#include "detlab/model.hpp"
#include "detlab/raqg.hpp"

namespace detlab::train {

struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class OptimizerKind { adamw, sgd };

struct TrainConfig {
    int epochs = 60;
    double lr = 1e-4;
    int lr_drop_epoch = 40;
    double lr_drop_factor = 0.1;
    double weight_decay = 1e-4;
    OptimizerKind optimizer = OptimizerKind::adamw;
    raqg::QueryStrategy strategy = raqg::QueryStrategy::adaptive(5, true);
    loss::RankingLoss ranking_loss = loss::RankingLoss::sgl1;
    loss::LossWeights weights;
    double grad_clip = 1.0;  // global norm over non-ranking parameters; <= 0 disables
    bool encoder_aux_loss = true;
    // Detection loss on every intermediate decoder layer through the shared heads.
    bool decoder_aux_loss = false;
    // Switch from teacher-forced to predicted query counts from this epoch on (-1 = never).
    int predicted_count_from_epoch = -1;
    bool audit = false;
    // Random left-right / top-bottom mirroring of training scenes.
    bool flip_augment = true;
    double held_out_fraction = 0.2;
    int eval_every = 1;
    std::uint64_t seed = 0;
    model::ModelConfig model;

    void validate() const;
    ad::OptimizerConfig optimizer_config() const;
    // Model config with strategy-dependent fields (free query slots, M) filled in.
    model::ModelConfig resolved_model() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
std::string config_hash(const TrainConfig& c);

struct StepResult {
    double cls = 0.0;
    double giou = 0.0;
    double l1 = 0.0;
    std::optional<double> ranking;  // unset when the image has no positives
    double total = 0.0;
    std::size_t query_count = 0;
    double r_pred = 0.0;
    std::optional<raqg::RankingLabel> label;
    std::optional<raqg::GuidelineReport> audit;
};

// Encoder proposal values that feed the non-differentiable parts of a step
// (matching, ranking label, query selection and the detached anchors).
struct FrozenProposals {
    std::vector<double> scores;
    std::vector<geom::Box> boxes;
};

struct ForwardLoss {
    ad::Tensor total;
    StepResult result;  // scalar copies; iteration-independent fields only
    FrozenProposals proposals;
};

// Forward pass and full training loss for one scene, without backward.
// strategy must already be resolved against the model's token count. With
// frozen set, selection and matching use those values instead of the live
// proposals, which makes the loss a smooth function of the parameters.
ForwardLoss forward_loss(const model::Detector& model, const TrainConfig& config,
                         const raqg::QueryStrategy& strategy, const data::Scene& scene, int epoch,
                         const FrozenProposals* frozen = nullptr);

// Owns the optimizer state for one model.
class Trainer {
public:
    Trainer(model::Detector& model, const TrainConfig& config);

    // Forward, Hungarian assignment, Eq.-5-style loss with encoder auxiliary
    // terms, backward and one optimizer update.
    StepResult train_step(const data::Scene& scene, int epoch);

    std::size_t iterations() const { return iterations_; }

private:
    model::Detector& model_;
    TrainConfig config_;
    raqg::QueryStrategy strategy_;
    ad::AdamW adam_;
    std::size_t iterations_ = 0;
};

struct Inference {
    std::vector<eval::Detection> detections;
    std::vector<geom::Box> anchors;
    std::size_t query_count = 0;
    double r_pred = 0.0;
};

// Gradient-free forward pass using predicted counts for raqg.
Inference infer(const model::Detector& model, const raqg::QueryStrategy& strategy, const data::Scene& scene);

struct EvalSummary {
    eval::EvalResult metrics;
    double mean_query_count = 0.0;
    std::vector<std::size_t> query_counts;
    std::vector<double> r_preds;
};

EvalSummary evaluate_model(const model::Detector& model, const raqg::QueryStrategy& strategy,
                           const data::Dataset& scenes);

void to_json(nlohmann::json& j, const EvalSummary& s);

struct EpochLog {
    int epoch = 0;
    double learning_rate = 0.0;
    double mean_total = 0.0;
    double mean_query_count = 0.0;
    std::optional<EvalSummary> eval;
};

struct TrainOutcome {
    std::vector<EpochLog> epochs;
    EvalSummary final_eval;
    std::filesystem::path checkpoint;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Seeded shuffled passes with per-epoch held-out evaluation. Writes
// checkpoint.{json,bin}, loss.csv and eval.json into run_dir. Epoch summaries
// go to on_epoch when given, else to the info log.
TrainOutcome train(model::Detector& model, const data::Dataset& dataset, const TrainConfig& config,
                   const std::filesystem::path& run_dir, const EpochCallback& on_epoch = {});

// Checkpoint with the metadata load_trained needs.
void save_trained(const std::filesystem::path& stem, const model::Detector& model, const TrainConfig& config);

std::string format_epoch(const EpochLog& log);

// Builds a model from a checkpoint written by train().
struct LoadedModel {
    TrainConfig config;
    model::Detector model;
};
LoadedModel load_trained(const std::filesystem::path& checkpoint_stem);

struct AblationCell {
    std::string label;
    TrainConfig config;
};

struct AblationRow {
    std::string label;
    bool ok = false;
    std::string error;
    double mean_query_count = 0.0;
    double mr = 1.0;
    double ap = 0.0;
    double recall = 0.0;
    double first_epoch_loss = 0.0;
    double last_epoch_loss = 0.0;
};

// Trains and evaluates one model per cell; failures are recorded per row.
std::vector<AblationRow> ablate(const data::Dataset& dataset, const std::vector<AblationCell>& cells,
                                const std::filesystem::path& out_dir);

// Cells as columns, metrics as rows; failed cells print "GE".
std::string render_ablation_table(const std::vector<AblationRow>& rows, const std::string& title);

}  // namespace detlab::train
