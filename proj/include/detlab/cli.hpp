#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "detlab/data.hpp"
#include "detlab/raqg.hpp"
#include "detlab/trainer.hpp"

namespace detlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct RunManifest {
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string git_describe;
    std::string started_at;  // UTC, ISO 8601
    std::vector<std::string> outputs;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

std::string git_describe();

struct CompareRow {
    std::string strategy;
    double queries = 0.0;  // mean query count per image
    double mr = 1.0;
    double ap = 0.0;
    double recall = 0.0;

    bool operator==(const CompareRow&) const = default;
};

// Columns: strategy, queries, mr, ap, recall; reals at full precision.
std::string compare_csv(const std::vector<CompareRow>& rows);
std::vector<CompareRow> parse_compare_csv(const std::string& text);
// Fixed-width table; MR, AP and Recall in percent.
std::string render_compare_table(const std::vector<CompareRow>& rows);

// "<stem>" or "<stem>@<lp|two-stage|raqg>[:K]"; the suffix overrides the
// checkpoint's strategy.
struct RunSpec {
    std::filesystem::path checkpoint;
    std::string strategy_override;
};
RunSpec parse_run_spec(const std::string& text);

// Dataset summary written next to a generated dataset.
nlohmann::json dataset_summary(const data::Dataset& dataset, int crowd_bins = 10);

// Scene overlay: GT outlines, anchor centres as dots, detections above
// score_threshold as filled outlines and the query count in a caption.
std::string render_queries_svg(const data::Scene& scene, const train::Inference& inference,
                               double score_threshold = 0.3, int size_px = 512);

// Full command line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace detlab::cli
