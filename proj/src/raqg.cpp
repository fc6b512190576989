#include "detlab/raqg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace detlab::raqg {

QueryStrategy QueryStrategy::learnable_parameters(std::size_t k) {
    QueryStrategy s;
    s.kind = StrategyKind::learnable_parameters;
    s.fixed_queries = k;
    return s;
}

QueryStrategy QueryStrategy::two_stage(std::size_t k) {
    QueryStrategy s;
    s.kind = StrategyKind::two_stage;
    s.fixed_queries = k;
    return s;
}

QueryStrategy QueryStrategy::adaptive(int m, bool removal) {
    QueryStrategy s;
    s.kind = StrategyKind::raqg;
    s.m = m;
    s.removal = removal;
    return s;
}

QueryStrategy QueryStrategy::resolved(std::size_t token_count) const {
    QueryStrategy s = *this;
    if (s.x_max == 0) s.x_max = token_count;
    if (s.x_min < 1 || s.x_min > s.x_max || s.x_max > token_count) {
        throw StrategyError("query bounds must satisfy 1 <= x_min <= x_max <= " + std::to_string(token_count));
    }
    if (s.kind != StrategyKind::raqg) {
        if (s.fixed_queries < 1) throw StrategyError("fixed-count strategies need K >= 1");
        if (s.fixed_queries > token_count) {
            throw StrategyError("K = " + std::to_string(s.fixed_queries) + " exceeds the token count " +
                                std::to_string(token_count));
        }
    }
    if (s.m < 0) throw StrategyError("M must be >= 0");
    return s;
}

std::string QueryStrategy::name() const {
    switch (kind) {
        case StrategyKind::learnable_parameters: return "lp(" + std::to_string(fixed_queries) + ")";
        case StrategyKind::two_stage: return "two-stage(" + std::to_string(fixed_queries) + ")";
        case StrategyKind::raqg:
            return removal ? "raqg(removal,M=" + std::to_string(m) + ")" : "raqg(M=" + std::to_string(m) + ")";
    }
    return "?";
}

StrategyKind parse_strategy_kind(const std::string& s) {
    if (s == "lp" || s == "learnable_parameters") return StrategyKind::learnable_parameters;
    if (s == "two-stage" || s == "two_stage") return StrategyKind::two_stage;
    if (s == "raqg") return StrategyKind::raqg;
    throw StrategyError("unknown strategy '" + s + "'");
}

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::learnable_parameters: return "lp";
        case StrategyKind::two_stage: return "two-stage";
        case StrategyKind::raqg: return "raqg";
    }
    return "?";
}

void to_json(nlohmann::json& j, const QueryStrategy& s) {
    j = {{"kind", to_string(s.kind)}, {"fixed_queries", s.fixed_queries}, {"m", s.m},
         {"removal", s.removal},      {"x_min", s.x_min},                 {"x_max", s.x_max}};
}

void from_json(const nlohmann::json& j, QueryStrategy& s) {
    QueryStrategy d;
    s.kind = parse_strategy_kind(j.value("kind", to_string(d.kind)));
    s.fixed_queries = j.value("fixed_queries", d.fixed_queries);
    s.m = j.value("m", d.m);
    s.removal = j.value("removal", d.removal);
    s.x_min = j.value("x_min", d.x_min);
    s.x_max = j.value("x_max", d.x_max);
}

std::size_t round_count(double x) {
    if (!(x > 0.0)) return 0;
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

std::optional<RankingLabel> ranking_label(std::span<const double> scores, const match::Assignment& assignment,
                                          int m) {
    if (assignment.pairs.empty()) return std::nullopt;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> rank_of(scores.size());
    for (std::size_t r = 0; r < order.size(); ++r) rank_of[order[r]] = r + 1;

    std::size_t worst = 0;
    for (auto [pred, gt] : assignment.pairs) {
        if (pred >= scores.size()) throw std::out_of_range("ranking_label: assignment refers to a missing proposal");
        worst = std::max(worst, rank_of[pred]);
    }
    return RankingLabel{worst, static_cast<double>(1 + m) * static_cast<double>(worst)};
}

std::size_t supplement_count(double r, int m, std::size_t x_min, std::size_t x_max) {
    const std::size_t x = round_count(static_cast<double>(1 + m) * std::max(r, 0.0));
    return std::clamp(x, x_min, x_max);
}

std::size_t select_count_for_training(const std::optional<RankingLabel>& label, const QueryStrategy& s) {
    if (s.kind != StrategyKind::raqg) throw StrategyError("select_count_for_training needs the raqg strategy");
    if (!label) return s.x_min;
    return std::clamp(round_count(label->scaled), s.x_min, s.x_max);
}

std::size_t select_count_for_inference(double r_pred, const QueryStrategy& s) {
    if (s.kind != StrategyKind::raqg) throw StrategyError("select_count_for_inference needs the raqg strategy");
    if (s.removal) return std::clamp(round_count(r_pred), s.x_min, s.x_max);
    return supplement_count(r_pred, s.m, s.x_min, s.x_max);
}

double ranking_target(const RankingLabel& label, const QueryStrategy& s) {
    return s.removal ? label.scaled : static_cast<double>(label.base_rank);
}

std::size_t baseline_count(const QueryStrategy& s, std::size_t token_count) {
    if (s.kind == StrategyKind::raqg) throw StrategyError("baseline_count needs a fixed-count strategy");
    if (s.fixed_queries > token_count) {
        throw StrategyError("K = " + std::to_string(s.fixed_queries) + " exceeds the token count " +
                            std::to_string(token_count));
    }
    return s.fixed_queries;
}

GuidelineReport guideline_audit(std::span<const geom::Box> anchors, std::span<const geom::Box> gt_boxes,
                                double coverage_iou) {
    GuidelineReport r;
    r.query_count = anchors.size();
    r.gt_count = gt_boxes.size();
    r.enough_queries = r.query_count >= r.gt_count;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        for (std::size_t j = i + 1; j < anchors.size(); ++j) {
            r.max_anchor_iou = std::max(r.max_anchor_iou, geom::iou(anchors[i], anchors[j]));
        }
    }
    for (const auto& g : gt_boxes) {
        const bool covered = std::any_of(anchors.begin(), anchors.end(),
                                         [&](const geom::Box& a) { return geom::iou(a, g) > coverage_iou; });
        if (!covered) ++r.uncovered_gt;
    }
    r.all_gt_covered = r.uncovered_gt == 0;
    // one-to-one matching always pairs min(X, #GT) queries
    r.positives = std::min(r.query_count, r.gt_count);
    r.negatives = r.query_count - r.positives;
    if (r.negatives > 0) r.positive_negative_ratio = static_cast<double>(r.positives) / static_cast<double>(r.negatives);
    return r;
}

void to_json(nlohmann::json& j, const GuidelineReport& r) {
    j = {{"query_count", r.query_count},
         {"gt_count", r.gt_count},
         {"enough_queries", r.enough_queries},
         {"max_anchor_iou", r.max_anchor_iou},
         {"all_gt_covered", r.all_gt_covered},
         {"uncovered_gt", r.uncovered_gt},
         {"positives", r.positives},
         {"negatives", r.negatives},
         {"positive_negative_ratio", r.positive_negative_ratio ? nlohmann::json(*r.positive_negative_ratio)
                                                               : nlohmann::json(nullptr)}};
}

}  // namespace detlab::raqg
