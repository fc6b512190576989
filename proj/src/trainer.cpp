#include "detlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "detlab/autodiff/checkpoint.hpp"
#include "detlab/autodiff/ops.hpp"
#include "detlab/io.hpp"
#include "detlab/matching.hpp"

namespace detlab::train {

namespace {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adamw ? "adamw" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adamw") return OptimizerKind::adamw;
    if (s == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

struct MatchedLoss {
    loss::LossComponents components;
    match::Assignment assignment;
};

// Hungarian assignment of predictions to ground truth and the three
// detection loss terms on top of it.
MatchedLoss detection_loss(const ad::Tensor& logits, const ad::Tensor& boxes, std::span<const double> scores,
                           std::span<const geom::Box> box_values, std::span<const geom::Box> gts) {
    MatchedLoss out;
    out.assignment = match::hungarian(match::detr_cost(scores, box_values, gts));
    std::vector<bool> positive(scores.size(), false);
    std::vector<std::size_t> rows;
    std::vector<geom::Box> targets;
    for (auto [p, g] : out.assignment.pairs) {
        positive[p] = true;
        rows.push_back(p);
        targets.push_back(gts[g]);
    }
    out.components.cls = loss::classification_loss(logits, positive);
    if (rows.empty()) {
        out.components.giou = ad::Tensor::scalar(0.0);
        out.components.l1 = ad::Tensor::scalar(0.0);
    } else {
        auto bl = loss::box_losses(ad::gather_rows(boxes, rows), targets);
        out.components.giou = bl.giou;
        out.components.l1 = bl.l1;
    }
    return out;
}

bool is_ranking_param(const std::string& name) { return name.rfind("ranking.", 0) == 0; }

std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (held_out_fraction < 0.0 || held_out_fraction >= 1.0) throw std::invalid_argument("held_out_fraction must lie in [0, 1)");
    optimizer_config().validate();
    weights.validate();
    resolved_model().validate();
    strategy.resolved(model.tokens());
}

ad::OptimizerConfig TrainConfig::optimizer_config() const {
    return {lr, weight_decay, lr_drop_epoch, lr_drop_factor};
}

model::ModelConfig TrainConfig::resolved_model() const {
    model::ModelConfig m = model;
    m.supplement_m = strategy.m;
    if (strategy.kind == raqg::StrategyKind::learnable_parameters) {
        m.learnable_queries = static_cast<int>(strategy.fixed_queries);
    }
    return m;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"lr", c.lr},
         {"lr_drop_epoch", c.lr_drop_epoch},
         {"lr_drop_factor", c.lr_drop_factor},
         {"weight_decay", c.weight_decay},
         {"optimizer", to_string(c.optimizer)},
         {"strategy", c.strategy},
         {"ranking_loss", loss::to_string(c.ranking_loss)},
         {"loss_weights", {c.weights.cls, c.weights.giou, c.weights.l1, c.weights.ranking}},
         {"grad_clip", c.grad_clip},
         {"encoder_aux_loss", c.encoder_aux_loss},
         {"decoder_aux_loss", c.decoder_aux_loss},
         {"predicted_count_from_epoch", c.predicted_count_from_epoch},
         {"audit", c.audit},
         {"flip_augment", c.flip_augment},
         {"held_out_fraction", c.held_out_fraction},
         {"eval_every", c.eval_every},
         {"seed", c.seed},
         {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.lr = j.value("lr", d.lr);
    c.lr_drop_epoch = j.value("lr_drop_epoch", d.lr_drop_epoch);
    c.lr_drop_factor = j.value("lr_drop_factor", d.lr_drop_factor);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.optimizer = parse_optimizer(j.value("optimizer", to_string(d.optimizer)));
    c.strategy = j.value("strategy", d.strategy);
    c.ranking_loss = loss::parse_ranking_loss(j.value("ranking_loss", loss::to_string(d.ranking_loss)));
    if (j.contains("loss_weights")) {
        const auto w = j.at("loss_weights").get<std::vector<double>>();
        if (w.size() != 4) throw std::invalid_argument("loss_weights needs 4 entries");
        c.weights = {w[0], w[1], w[2], w[3]};
    } else {
        c.weights = d.weights;
    }
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.encoder_aux_loss = j.value("encoder_aux_loss", d.encoder_aux_loss);
    c.decoder_aux_loss = j.value("decoder_aux_loss", d.decoder_aux_loss);
    c.predicted_count_from_epoch = j.value("predicted_count_from_epoch", d.predicted_count_from_epoch);
    c.audit = j.value("audit", d.audit);
    c.flip_augment = j.value("flip_augment", d.flip_augment);
    c.held_out_fraction = j.value("held_out_fraction", d.held_out_fraction);
    c.eval_every = j.value("eval_every", d.eval_every);
    c.seed = j.value("seed", d.seed);
    c.model = j.value("model", d.model);
}

std::string config_hash(const TrainConfig& c) {
    nlohmann::json j = c;
    j.erase("seed");
    return io::fnv1a_hex(j.dump()).substr(0, 12);
}

Trainer::Trainer(model::Detector& model, const TrainConfig& config)
    : model_(model),
      config_(config),
      strategy_(config.strategy.resolved(model.config().tokens())),
      adam_(config.optimizer_config()) {
    config_.validate();
    model_.parameters().zero_grad();
}

ForwardLoss forward_loss(const model::Detector& model, const TrainConfig& config,
                         const raqg::QueryStrategy& strategy, const data::Scene& scene, int epoch,
                         const FrozenProposals* frozen) {
    const auto& gts = scene.gt_boxes;
    const ad::Tensor image = data::render_scene(scene, model.config().image_size);
    const ad::Tensor x_bac = model.backbone_forward(image);
    const model::EncoderOutput enc = model.encoder_forward(x_bac);
    model::DenseProposals props = enc.proposals;
    if (frozen) {
        if (frozen->scores.size() != props.scores.size() || frozen->boxes.size() != props.box_values.size()) {
            throw std::invalid_argument("forward_loss: frozen proposals do not match the token count");
        }
        props.scores = frozen->scores;
        props.box_values = frozen->boxes;
    }

    MatchedLoss enc_loss = detection_loss(props.logits, props.boxes, props.scores, props.box_values, gts);

    ForwardLoss out;
    out.proposals = {props.scores, props.box_values};
    StepResult& result = out.result;
    model::QuerySet queries;
    std::optional<ad::Tensor> ranking_term;
    switch (strategy.kind) {
        case raqg::StrategyKind::learnable_parameters:
            queries = model.learnable_queries();
            break;
        case raqg::StrategyKind::two_stage:
            queries = model.query_generate(props, raqg::baseline_count(strategy, props.scores.size()));
            break;
        case raqg::StrategyKind::raqg: {
            result.label = raqg::ranking_label(props.scores, enc_loss.assignment, strategy.m);
            const ad::Tensor r = model.ranking_head_forward(enc.features);
            result.r_pred = r.item();
            if (result.label) {
                ranking_term = loss::ranking_loss(config.ranking_loss, r,
                                                  {raqg::ranking_target(*result.label, strategy)});
            }
            const bool use_prediction =
                config.predicted_count_from_epoch >= 0 && epoch >= config.predicted_count_from_epoch;
            const std::size_t x = use_prediction ? raqg::select_count_for_inference(result.r_pred, strategy)
                                                 : raqg::select_count_for_training(result.label, strategy);
            queries = model.query_generate(props, x);
            break;
        }
    }
    result.query_count = queries.count();
    if (config.audit) result.audit = raqg::guideline_audit(queries.anchors, gts);

    const std::vector<ad::Tensor> layers = model.decoder_forward_all(enc.features, queries);
    const model::Detections dets = model.detection_heads(layers.back(), queries);
    MatchedLoss dec_loss = detection_loss(dets.logits, dets.boxes, dets.scores, dets.box_values, gts);
    dec_loss.components.ranking = ranking_term;

    ad::Tensor total = loss::total_loss(dec_loss.components, config.weights);
    if (config.encoder_aux_loss) {
        total = ad::add(total, loss::total_loss(enc_loss.components, config.weights));
    }
    if (config.decoder_aux_loss) {
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
            const model::Detections aux = model.detection_heads(layers[l], queries);
            const MatchedLoss m = detection_loss(aux.logits, aux.boxes, aux.scores, aux.box_values, gts);
            total = ad::add(total, loss::total_loss(m.components, config.weights));
        }
    }

    result.cls = dec_loss.components.cls.item();
    result.giou = dec_loss.components.giou.item();
    result.l1 = dec_loss.components.l1.item();
    if (ranking_term) result.ranking = ranking_term->item();
    result.total = total.item();
    out.total = total;
    return out;
}

StepResult Trainer::train_step(const data::Scene& scene, int epoch) {
    ForwardLoss fl = forward_loss(model_, config_, strategy_, scene, epoch);
    StepResult result = std::move(fl.result);
    ad::Tensor total = fl.total;

    ++iterations_;
    if (!std::isfinite(result.total) || !std::isfinite(result.r_pred)) {
        throw NonFiniteLoss("non-finite loss at iteration " + std::to_string(iterations_) + " (epoch " +
                            std::to_string(epoch) + ", scene " + std::to_string(scene.id) + "): cls=" +
                            fmt_num(result.cls) + " giou=" + fmt_num(result.giou) + " l1=" + fmt_num(result.l1) +
                            " ranking=" + fmt_num(result.ranking.value_or(0.0)) + " r_pred=" +
                            fmt_num(result.r_pred) + " total=" + fmt_num(result.total));
    }

    total.backward();

    auto params = model_.parameters().items();
    if (config_.grad_clip > 0.0) {
        std::vector<ad::Parameter> clipped;
        for (const auto& p : params) {
            if (!is_ranking_param(p.name)) clipped.push_back(p);
        }
        ad::clip_grad_norm(clipped, config_.grad_clip);
    }
    for (const auto& p : params) {
        for (double g : p.tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NonFiniteLoss("non-finite gradient in '" + p.name + "' at iteration " +
                                    std::to_string(iterations_) + " (total=" + fmt_num(result.total) + ")");
            }
        }
    }
    if (config_.optimizer == OptimizerKind::adamw) {
        adam_.step(params, epoch);
    } else {
        ad::sgd_step(params, config_.optimizer_config(), epoch);
    }
    return result;
}

Inference infer(const model::Detector& model, const raqg::QueryStrategy& strategy_in, const data::Scene& scene) {
    ad::NoGradGuard no_grad;
    const auto strategy = strategy_in.resolved(model.config().tokens());
    const ad::Tensor image = data::render_scene(scene, model.config().image_size);
    const model::EncoderOutput enc = model.encoder_forward(model.backbone_forward(image));
    Inference out;
    model::QuerySet queries;
    switch (strategy.kind) {
        case raqg::StrategyKind::learnable_parameters: queries = model.learnable_queries(); break;
        case raqg::StrategyKind::two_stage:
            queries = model.query_generate(enc.proposals, raqg::baseline_count(strategy, enc.proposals.scores.size()));
            break;
        case raqg::StrategyKind::raqg:
            out.r_pred = model.ranking_head_forward(enc.features).item();
            queries = model.query_generate(enc.proposals, raqg::select_count_for_inference(out.r_pred, strategy));
            break;
    }
    const model::Detections dets = model.detection_heads(model.decoder_forward(enc.features, queries), queries);
    out.query_count = queries.count();
    out.anchors = queries.anchors;
    for (std::size_t i = 0; i < dets.scores.size(); ++i) out.detections.push_back({dets.box_values[i], dets.scores[i]});
    return out;
}

EvalSummary evaluate_model(const model::Detector& model, const raqg::QueryStrategy& strategy,
                           const data::Dataset& scenes) {
    EvalSummary s;
    std::vector<eval::ImageDetections> images;
    images.reserve(scenes.size());
    for (const auto& scene : scenes) {
        Inference inf = infer(model, strategy, scene);
        s.query_counts.push_back(inf.query_count);
        s.r_preds.push_back(inf.r_pred);
        images.push_back({std::move(inf.detections), scene.gt_boxes});
    }
    s.metrics = eval::evaluate(images);
    if (!s.query_counts.empty()) {
        s.mean_query_count = static_cast<double>(std::accumulate(s.query_counts.begin(), s.query_counts.end(), std::size_t{0})) /
                             static_cast<double>(s.query_counts.size());
    }
    return s;
}

void to_json(nlohmann::json& j, const EvalSummary& s) {
    j = {{"mr", s.metrics.mr},
         {"ap", s.metrics.ap},
         {"recall", s.metrics.recall},
         {"mean_query_count", s.mean_query_count}};
}

std::string format_epoch(const EpochLog& log) {
    std::string line = fmt::format("epoch {:3d}  lr {:.2e}  loss {:.4f}  queries {:.1f}", log.epoch, log.learning_rate,
                                   log.mean_total, log.mean_query_count);
    if (log.eval) {
        line += fmt::format("  | held-out MR {:.3f} AP {:.3f} recall {:.3f} X {:.1f}", log.eval->metrics.mr,
                            log.eval->metrics.ap, log.eval->metrics.recall, log.eval->mean_query_count);
    }
    return line;
}

void save_trained(const std::filesystem::path& stem, const model::Detector& model, const TrainConfig& config) {
    nlohmann::json meta = {{"train_config", config}, {"model", model.config()}};
    ad::save_checkpoint(stem, model.parameters(), meta);
}

TrainOutcome train(model::Detector& model, const data::Dataset& dataset, const TrainConfig& config,
                   const std::filesystem::path& run_dir, const EpochCallback& on_epoch) {
    config.validate();
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    data::Split split = data::split_held_out(dataset, config.held_out_fraction);
    if (split.train.empty()) throw std::invalid_argument("train: no training scenes after the held-out split");
    std::filesystem::create_directories(run_dir);

    Trainer trainer(model, config);
    Rng shuffle = Rng::stream(config.seed, "shuffle");
    Rng augment = Rng::stream(config.seed, "augment");
    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::ostringstream loss_csv;
    loss_csv.precision(10);
    loss_csv << "epoch,iter,cls,giou,l1,sgl1,total\n";
    nlohmann::json eval_log = nlohmann::json::array();
    TrainOutcome outcome;
    const auto opt = config.optimizer_config();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.integer(0, static_cast<std::int64_t>(i) - 1))]);
        }
        EpochLog log;
        log.epoch = epoch;
        log.learning_rate = ad::effective_learning_rate(opt, epoch);
        double loss_sum = 0.0, count_sum = 0.0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const data::Scene& scene = split.train[order[k]];
            StepResult r;
            if (config.flip_augment) {
                const bool h = augment.uniform() < 0.5;
                const bool v = augment.uniform() < 0.5;
                r = trainer.train_step(data::flip_scene(scene, h, v), epoch);
            } else {
                r = trainer.train_step(scene, epoch);
            }
            loss_sum += r.total;
            count_sum += static_cast<double>(r.query_count);
            loss_csv << epoch << ',' << trainer.iterations() << ',' << r.cls << ',' << r.giou << ',' << r.l1 << ','
                     << (r.ranking ? fmt_num(*r.ranking) : std::string()) << ',' << r.total << '\n';
        }
        log.mean_total = loss_sum / static_cast<double>(order.size());
        log.mean_query_count = count_sum / static_cast<double>(order.size());
        const bool last = epoch + 1 == config.epochs;
        if (!split.held_out.empty() && ((epoch + 1) % config.eval_every == 0 || last)) {
            log.eval = evaluate_model(model, config.strategy, split.held_out);
        }
        nlohmann::json entry = {{"epoch", epoch},
                                {"lr", log.learning_rate},
                                {"train_loss", log.mean_total},
                                {"train_mean_query_count", log.mean_query_count}};
        if (log.eval) entry["held_out"] = *log.eval;
        eval_log.push_back(entry);
        if (on_epoch) on_epoch(log);
        else spdlog::info("{}", format_epoch(log));
        outcome.epochs.push_back(std::move(log));
    }
    if (outcome.epochs.back().eval) outcome.final_eval = *outcome.epochs.back().eval;

    outcome.checkpoint = run_dir / "checkpoint";
    save_trained(outcome.checkpoint, model, config);
    io::write_atomic(run_dir / "loss.csv", loss_csv.str());
    io::write_atomic(run_dir / "eval.json", eval_log.dump(2) + "\n");
    return outcome;
}

LoadedModel load_trained(const std::filesystem::path& checkpoint_stem) {
    const ad::Checkpoint ck = ad::load_checkpoint(checkpoint_stem);
    TrainConfig config = ck.meta.at("train_config").get<TrainConfig>();
    model::ModelConfig mc = ck.meta.at("model").get<model::ModelConfig>();
    LoadedModel out{config, model::Detector(mc, config.seed)};
    ad::restore_parameters(ck, out.model.parameters());
    return out;
}

std::vector<AblationRow> ablate(const data::Dataset& dataset, const std::vector<AblationCell>& cells,
                                const std::filesystem::path& out_dir) {
    std::vector<AblationRow> rows;
    for (const auto& cell : cells) {
        AblationRow row;
        row.label = cell.label;
        try {
            model::Detector model(cell.config.resolved_model(), cell.config.seed);
            const auto outcome = train(model, dataset, cell.config, out_dir / cell.label);
            row.ok = true;
            row.mean_query_count = outcome.final_eval.mean_query_count;
            row.mr = outcome.final_eval.metrics.mr;
            row.ap = outcome.final_eval.metrics.ap;
            row.recall = outcome.final_eval.metrics.recall;
            row.first_epoch_loss = outcome.epochs.front().mean_total;
            row.last_epoch_loss = outcome.epochs.back().mean_total;
        } catch (const NonFiniteLoss& e) {
            row.error = e.what();
            spdlog::warn("ablation cell '{}' diverged: {}", cell.label, e.what());
        } catch (const std::exception& e) {
            row.error = e.what();
            spdlog::warn("ablation cell '{}' failed: {}", cell.label, e.what());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows, const std::string& title) {
    std::ostringstream os;
    os << title << '\n';
    auto line = [&](const std::string& head, auto value) {
        os << head;
        for (const auto& r : rows) {
            os << " | ";
            if (!r.ok) os << "GE";
            else os << value(r);
        }
        os << '\n';
    };
    os << "metric";
    for (const auto& r : rows) os << " | " << r.label;
    os << '\n';
    auto pct = [](double v) { return fmt::format("{:.1f}", 100.0 * v); };
    line("Queries", [](const AblationRow& r) { return fmt::format("~{:.1f}", r.mean_query_count); });
    line("MR", [&](const AblationRow& r) { return pct(r.mr); });
    line("AP", [&](const AblationRow& r) { return pct(r.ap); });
    line("Recall", [&](const AblationRow& r) { return pct(r.recall); });
    return os.str();
}

}  // namespace detlab::train
