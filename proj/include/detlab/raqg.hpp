#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "detlab/geometry.hpp"
#include "detlab/matching.hpp"

namespace detlab::raqg {

struct StrategyError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class StrategyKind { learnable_parameters, two_stage, raqg };

// How the decoder's queries are produced and how many there are.
struct QueryStrategy {
    StrategyKind kind = StrategyKind::raqg;
    std::size_t fixed_queries = 0;  // K for the fixed-count strategies
    int m = 5;                      // supplement multiplier
    bool removal = true;            // head learns the scaled count directly
    std::size_t x_min = 1;
    std::size_t x_max = 0;          // 0 means "token count"

    static QueryStrategy learnable_parameters(std::size_t k);
    static QueryStrategy two_stage(std::size_t k);
    static QueryStrategy adaptive(int m = 5, bool removal = true);

    // Resolves x_max and checks the bounds against the token count.
    QueryStrategy resolved(std::size_t token_count) const;
    std::string name() const;
};

StrategyKind parse_strategy_kind(const std::string& s);
std::string to_string(StrategyKind kind);

void to_json(nlohmann::json& j, const QueryStrategy& s);
void from_json(const nlohmann::json& j, QueryStrategy& s);

struct RankingLabel {
    std::size_t base_rank = 1;  // 1-based rank of the lowest-scoring positive
    double scaled = 1.0;        // (1 + M) * base_rank
};

// Round half up.
std::size_t round_count(double x);

// Rank of the weakest positive proposal after a stable descending sort of
// the scores. nullopt when the assignment has no positives (skip the ranking
// loss for this image).
std::optional<RankingLabel> ranking_label(std::span<const double> scores, const match::Assignment& assignment,
                                          int m);

// clamp(round((1 + M) * R), x_min, x_max)
std::size_t supplement_count(double r, int m, std::size_t x_min, std::size_t x_max);

// Teacher-forced decoder query count. The strategy must be resolved.
std::size_t select_count_for_training(const std::optional<RankingLabel>& label, const QueryStrategy& strategy);

// Query count from the head's prediction. The strategy must be resolved.
std::size_t select_count_for_inference(double r_pred, const QueryStrategy& strategy);

// Ranking-head regression target: the scaled label for the removal variant,
// the base rank otherwise.
double ranking_target(const RankingLabel& label, const QueryStrategy& strategy);

// K for fixed-count strategies; throws when K exceeds the token count.
std::size_t baseline_count(const QueryStrategy& strategy, std::size_t token_count);

struct GuidelineReport {
    std::size_t query_count = 0;
    std::size_t gt_count = 0;
    bool enough_queries = false;      // X >= #GT
    double max_anchor_iou = 0.0;      // density: largest pairwise anchor IoU
    bool all_gt_covered = false;      // every GT has an anchor with IoU > 0.3
    std::size_t uncovered_gt = 0;
    std::size_t positives = 0;        // decoder samples matched to a GT
    std::size_t negatives = 0;
    std::optional<double> positive_negative_ratio;  // unset when there are no negatives
};

GuidelineReport guideline_audit(std::span<const geom::Box> anchors, std::span<const geom::Box> gt_boxes,
                                double coverage_iou = 0.3);

void to_json(nlohmann::json& j, const GuidelineReport& r);

}  // namespace detlab::raqg
