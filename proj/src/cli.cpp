#include "detlab/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/cfg/env.h>
#include <spdlog/spdlog.h>

#include "detlab/autodiff/checkpoint.hpp"
#include "detlab/gradsuite.hpp"
#include "detlab/io.hpp"

#ifndef DETLAB_GIT_DESCRIBE
#define DETLAB_GIT_DESCRIBE "unknown"
#endif

namespace detlab::cli {

namespace {

// Bad flags, configs or input files; maps to exit code 2.
struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + '"';
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    return fields;
}

template <class F>
auto as_usage(const std::string& what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw UsageFailure(what + ": " + e.what());
    }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    return as_usage("reading " + path.string(), [&] { return nlohmann::json::parse(io::read_file(path)); });
}

data::Dataset read_dataset(const std::filesystem::path& path) {
    return as_usage("reading dataset " + path.string(), [&] { return data::load_dataset(path); });
}

std::filesystem::path checkpoint_stem(std::filesystem::path p) {
    if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
    return p;
}

// Strategy flags shared by train, eval and plot-queries.
struct StrategyFlags {
    std::string kind;
    std::optional<std::size_t> fixed_queries;
    std::optional<int> m;
    std::optional<bool> removal;

    void add_to(CLI::App& app) {
        app.add_option("--strategy", kind, "Query strategy")->check(CLI::IsMember({"lp", "two-stage", "raqg"}));
        app.add_option("--fixed-queries", fixed_queries, "K for the fixed-count strategies")->check(CLI::PositiveNumber);
        app.add_option("--m", m, "Supplement multiplier M")->check(CLI::NonNegativeNumber);
        app.add_option("--removal", removal, "Removal variant: the head learns the scaled count");
    }

    raqg::QueryStrategy apply(raqg::QueryStrategy s) const {
        if (!kind.empty()) s.kind = raqg::parse_strategy_kind(kind);
        if (fixed_queries) s.fixed_queries = *fixed_queries;
        if (m) s.m = *m;
        if (removal) s.removal = *removal;
        if (s.kind != raqg::StrategyKind::raqg && s.fixed_queries == 0) {
            throw UsageFailure("strategy " + to_string(s.kind) + " needs --fixed-queries");
        }
        return s;
    }
};

raqg::QueryStrategy parse_strategy_suffix(const std::string& text, const raqg::QueryStrategy& base) {
    raqg::QueryStrategy s = base;
    const auto colon = text.find(':');
    s.kind = raqg::parse_strategy_kind(text.substr(0, colon));
    if (colon != std::string::npos) {
        const std::string k = text.substr(colon + 1);
        std::size_t used = 0;
        const long v = std::stol(k, &used);
        if (used != k.size() || v <= 0) throw UsageFailure("bad query count in '" + text + "'");
        s.fixed_queries = static_cast<std::size_t>(v);
    }
    if (s.kind != raqg::StrategyKind::raqg && s.fixed_queries == 0) {
        throw UsageFailure("strategy '" + text + "' needs a query count");
    }
    return s;
}

// LP slots are parameters, so evaluation must use the trained slot count.
void check_strategy_fits(const model::Detector& model, const raqg::QueryStrategy& s) {
    if (s.kind == raqg::StrategyKind::learnable_parameters &&
        s.fixed_queries != static_cast<std::size_t>(model.config().learnable_queries)) {
        throw UsageFailure("checkpoint has " + std::to_string(model.config().learnable_queries) +
                           " learnable queries, strategy asks for " + std::to_string(s.fixed_queries));
    }
    as_usage("strategy", [&] { return s.resolved(model.config().tokens()); });
}

const data::Scene& find_scene(const data::Dataset& dataset, std::optional<std::int64_t> id) {
    if (dataset.empty()) throw UsageFailure("dataset is empty");
    if (!id) return dataset.front();
    const auto it = std::find_if(dataset.begin(), dataset.end(), [&](const data::Scene& s) { return s.id == *id; });
    if (it == dataset.end()) throw UsageFailure("no scene with id " + std::to_string(*id));
    return *it;
}

int cmd_gen_data(const std::filesystem::path& spec_path, const std::filesystem::path& out_path,
                 std::optional<std::uint64_t> seed, std::ostream& out) {
    const data::DatasetSpec spec = as_usage("dataset spec " + spec_path.string(), [&] {
        auto s = read_json_file(spec_path).get<data::DatasetSpec>();
        if (seed) s.seed = *seed;
        s.validate();
        return s;
    });
    const data::Dataset dataset = data::generate_dataset(spec);
    data::save_dataset(out_path, dataset);
    auto summary_path = out_path;
    summary_path.replace_extension(".summary.json");
    const nlohmann::json summary = dataset_summary(dataset);
    io::write_atomic(summary_path, summary.dump(2) + "\n");
    out << summary.dump(2) << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::filesystem::path& dataset_path,
              const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed, const StrategyFlags& flags,
              const std::string& ranking_loss, const std::string& command_line, std::ostream& out) {
    train::TrainConfig config;
    if (!config_path.empty()) {
        config = as_usage("train config " + config_path, [&] { return read_json_file(config_path).get<train::TrainConfig>(); });
    }
    if (seed) config.seed = *seed;
    config.strategy = flags.apply(config.strategy);
    if (!ranking_loss.empty()) config.ranking_loss = as_usage("--ranking-loss", [&] { return loss::parse_ranking_loss(ranking_loss); });
    as_usage("train config", [&] {
        config.validate();
        return 0;
    });
    const data::Dataset dataset = read_dataset(dataset_path);

    const auto run_dir = out_dir / ("run-" + train::config_hash(config) + "-seed" + std::to_string(config.seed));
    RunManifest manifest{command_line, config_path, config.seed, git_describe(), utc_now(), {}};
    for (const char* name : {"checkpoint.json", "checkpoint.bin", "loss.csv", "eval.json", "config.json"}) {
        manifest.outputs.push_back((run_dir / name).string());
    }
    io::write_atomic(run_dir / "manifest.json", nlohmann::json(manifest).dump(2) + "\n");
    io::write_atomic(run_dir / "config.json", nlohmann::json(config).dump(2) + "\n");

    out << "run " << run_dir.string() << "  strategy " << config.strategy.name() << "\n" << std::flush;
    model::Detector model(config.resolved_model(), config.seed);
    const auto outcome = train::train(model, dataset, config, run_dir,
                                      [&](const train::EpochLog& log) { out << train::format_epoch(log) << "\n" << std::flush; });
    out << "final " << nlohmann::json(outcome.final_eval).dump() << "\n";
    out << "checkpoint " << outcome.checkpoint.string() << "\n";
    return kExitOk;
}

int cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_path,
             const StrategyFlags& flags, std::ostream& out) {
    const data::Dataset dataset = read_dataset(dataset_path);
    const train::LoadedModel loaded = train::load_trained(checkpoint_stem(checkpoint));
    const raqg::QueryStrategy strategy = flags.apply(loaded.config.strategy);
    check_strategy_fits(loaded.model, strategy);
    const train::EvalSummary summary = train::evaluate_model(loaded.model, strategy, dataset);
    out << nlohmann::json(summary).dump(2) << "\n";
    return kExitOk;
}

int cmd_compare(const std::vector<std::string>& runs, const std::filesystem::path& dataset_path,
                const std::filesystem::path& out_dir, std::ostream& out) {
    if (runs.size() < 2) throw UsageFailure("compare needs at least two --run entries");
    std::vector<RunSpec> specs;
    for (const auto& r : runs) specs.push_back(as_usage("--run " + r, [&] { return parse_run_spec(r); }));
    const data::Dataset dataset = read_dataset(dataset_path);

    std::vector<CompareRow> rows;
    nlohmann::json audits = nlohmann::json::array();
    for (const auto& spec : specs) {
        const train::LoadedModel loaded = train::load_trained(checkpoint_stem(spec.checkpoint));
        const raqg::QueryStrategy strategy =
            spec.strategy_override.empty()
                ? loaded.config.strategy
                : as_usage("--run strategy", [&] { return parse_strategy_suffix(spec.strategy_override, loaded.config.strategy); });
        check_strategy_fits(loaded.model, strategy);

        std::vector<eval::ImageDetections> images;
        nlohmann::json per_image = nlohmann::json::array();
        std::size_t total_queries = 0;
        for (const auto& scene : dataset) {
            train::Inference inf = train::infer(loaded.model, strategy, scene);
            total_queries += inf.query_count;
            per_image.push_back({{"scene", scene.id}, {"audit", raqg::guideline_audit(inf.anchors, scene.gt_boxes)}});
            images.push_back({std::move(inf.detections), scene.gt_boxes});
        }
        const eval::EvalResult metrics = eval::evaluate(images);
        const double queries = dataset.empty() ? 0.0 : static_cast<double>(total_queries) / static_cast<double>(dataset.size());
        rows.push_back({strategy.name(), queries, metrics.mr, metrics.ap, metrics.recall});
        audits.push_back({{"checkpoint", spec.checkpoint.string()}, {"strategy", strategy.name()}, {"images", per_image}});
    }

    const std::string table = render_compare_table(rows);
    out << table;
    if (!out_dir.empty()) {
        io::write_atomic(out_dir / "compare.csv", compare_csv(rows));
        io::write_atomic(out_dir / "compare.txt", table);
        io::write_atomic(out_dir / "audit.json", audits.dump(1) + "\n");
    }
    return kExitOk;
}

int cmd_plot_queries(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_path,
                     std::optional<std::int64_t> scene_id, const std::filesystem::path& out_path,
                     const StrategyFlags& flags, std::ostream& out) {
    const data::Dataset dataset = read_dataset(dataset_path);
    const data::Scene& scene = find_scene(dataset, scene_id);
    const train::LoadedModel loaded = train::load_trained(checkpoint_stem(checkpoint));
    const raqg::QueryStrategy strategy = flags.apply(loaded.config.strategy);
    check_strategy_fits(loaded.model, strategy);
    const train::Inference inf = train::infer(loaded.model, strategy, scene);
    io::write_atomic(out_path, render_queries_svg(scene, inf));
    out << "scene " << scene.id << "  X = " << inf.query_count << "  -> " << out_path.string() << "\n";
    return kExitOk;
}

}  // namespace

void to_json(nlohmann::json& j, const RunManifest& m) {
    j = {{"command", m.command},         {"config_path", m.config_path}, {"seed", m.seed},
         {"git_describe", m.git_describe}, {"started_at", m.started_at},  {"outputs", m.outputs}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
    j.at("command").get_to(m.command);
    j.at("config_path").get_to(m.config_path);
    j.at("seed").get_to(m.seed);
    j.at("git_describe").get_to(m.git_describe);
    j.at("started_at").get_to(m.started_at);
    j.at("outputs").get_to(m.outputs);
}

std::string git_describe() { return DETLAB_GIT_DESCRIBE; }

std::string compare_csv(const std::vector<CompareRow>& rows) {
    std::string s = "strategy,queries,mr,ap,recall\n";
    for (const auto& r : rows) {
        s += csv_field(r.strategy) + ',' + format_real(r.queries) + ',' + format_real(r.mr) + ',' + format_real(r.ap) +
             ',' + format_real(r.recall) + '\n';
    }
    return s;
}

std::vector<CompareRow> parse_compare_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "strategy,queries,mr,ap,recall") {
        throw data::ParseError("compare CSV: unexpected header");
    }
    std::vector<CompareRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 5) throw data::ParseError("compare CSV: expected 5 fields in '" + line + "'");
        try {
            rows.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4])});
        } catch (const std::logic_error&) {
            throw data::ParseError("compare CSV: bad number in '" + line + "'");
        }
    }
    return rows;
}

std::string render_compare_table(const std::vector<CompareRow>& rows) {
    std::size_t width = 8;
    for (const auto& r : rows) width = std::max(width, r.strategy.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "strategy" << std::right << std::setw(10) << "queries"
       << std::setw(8) << "MR" << std::setw(8) << "AP" << std::setw(8) << "Recall" << "\n";
    os << std::fixed;
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.strategy << std::right << std::setw(10)
           << std::setprecision(1) << r.queries << std::setw(8) << 100.0 * r.mr << std::setw(8) << 100.0 * r.ap
           << std::setw(8) << 100.0 * r.recall << "\n";
    }
    return os.str();
}

RunSpec parse_run_spec(const std::string& text) {
    const auto at = text.rfind('@');
    if (at == std::string::npos) return {text, ""};
    RunSpec spec{text.substr(0, at), text.substr(at + 1)};
    if (spec.checkpoint.empty() || spec.strategy_override.empty()) {
        throw std::invalid_argument("expected <checkpoint>@<strategy>[:K], got '" + text + "'");
    }
    parse_strategy_suffix(spec.strategy_override, raqg::QueryStrategy::adaptive());
    return spec;
}

nlohmann::json dataset_summary(const data::Dataset& dataset, int crowd_bins) {
    std::map<std::size_t, std::size_t> counts;
    std::vector<std::size_t> crowd(static_cast<std::size_t>(crowd_bins), 0);
    std::size_t objects = 0;
    for (const auto& s : dataset) {
        ++counts[s.gt_boxes.size()];
        objects += s.gt_boxes.size();
        const double level = data::mean_neighbor_iou(s);
        const auto bin = std::clamp(static_cast<long>(std::floor(level * crowd_bins)), 0L, static_cast<long>(crowd_bins) - 1);
        ++crowd[static_cast<std::size_t>(bin)];
    }
    nlohmann::json count_hist = nlohmann::json::object();
    for (const auto& [k, v] : counts) count_hist[std::to_string(k)] = v;
    nlohmann::json crowd_hist = nlohmann::json::array();
    for (int b = 0; b < crowd_bins; ++b) {
        crowd_hist.push_back({{"lo", static_cast<double>(b) / crowd_bins},
                              {"hi", static_cast<double>(b + 1) / crowd_bins},
                              {"images", crowd[static_cast<std::size_t>(b)]}});
    }
    return {{"images", dataset.size()},
            {"objects", objects},
            {"count_histogram", count_hist},
            {"crowd_histogram", crowd_hist}};
}

std::string render_queries_svg(const data::Scene& scene, const train::Inference& inference, double score_threshold,
                               int size_px) {
    const double s = size_px;
    const int caption = 28;
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size_px << "\" height=\"" << size_px + caption
       << "\" viewBox=\"0 0 " << size_px << ' ' << size_px + caption << "\">\n";
    os << "  <rect x=\"0\" y=\"0\" width=\"" << size_px << "\" height=\"" << size_px
       << "\" fill=\"white\" stroke=\"black\"/>\n";
    auto rect = [&](const geom::Box& b, const char* cls, const char* style) {
        const auto c = geom::to_corners(b);
        os << "  <rect class=\"" << cls << "\" x=\"" << c.x1 * s << "\" y=\"" << c.y1 * s << "\" width=\""
           << (c.x2 - c.x1) * s << "\" height=\"" << (c.y2 - c.y1) * s << "\" " << style << "/>\n";
    };
    for (const auto& d : inference.detections) {
        if (d.score > score_threshold) rect(d.box, "detection", "fill=\"#d62728\" fill-opacity=\"0.25\" stroke=\"#d62728\"");
    }
    for (const auto& g : scene.gt_boxes) rect(g, "gt", "fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"2\"");
    for (const auto& a : inference.anchors) {
        os << "  <circle class=\"query\" cx=\"" << a.cx * s << "\" cy=\"" << a.cy * s
           << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
    os << "  <text x=\"8\" y=\"" << size_px + 20 << "\" font-family=\"monospace\" font-size=\"16\">scene "
       << scene.id << ": X = " << inference.query_count << ", GT = " << scene.gt_boxes.size() << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    spdlog::cfg::load_env_levels();

    CLI::App app{"Desk-scale DETR query-generation lab"};
    app.require_subcommand(1);

    std::string config_path, dataset_path, out_path, checkpoint, ranking_loss, corrupt;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> scene_id;
    std::vector<std::string> runs;
    int cases = 50;
    StrategyFlags train_flags, eval_flags, plot_flags;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--config", config_path, "DatasetSpec JSON")->required();
    gen->add_option("--out", out_path, "Output JSON-lines path")->required();
    gen->add_option("--seed", seed, "Override the dataset seed");

    auto* tr = app.add_subcommand("train", "Train a detector");
    tr->add_option("--config", config_path, "TrainConfig JSON (defaults when omitted)");
    tr->add_option("--dataset", dataset_path, "Dataset JSON-lines")->required();
    tr->add_option("--out", out_path, "Directory that receives the run directory")->required();
    tr->add_option("--seed", seed, "Override the config seed");
    train_flags.add_to(*tr);
    tr->add_option("--ranking-loss", ranking_loss, "Ranking loss")
        ->check(CLI::IsMember({"sgl1", "l1", "smooth_l1", "l2"}));

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint stem or .json path")->required();
    ev->add_option("--dataset", dataset_path, "Dataset JSON-lines")->required();
    eval_flags.add_to(*ev);

    auto* cmp = app.add_subcommand("compare", "Compare strategies on one dataset");
    cmp->add_option("--run", runs, "<checkpoint>[@<lp|two-stage|raqg>[:K]], repeatable")->required();
    cmp->add_option("--dataset", dataset_path, "Dataset JSON-lines")->required();
    cmp->add_option("--out", out_path, "Directory for compare.csv, compare.txt and audit.json");

    auto* gc = app.add_subcommand("grad-check", "Run the finite-difference gradient suite");
    gc->add_option("--seed", seed, "Suite seed");
    gc->add_option("--cases", cases, "Random cases per check")->check(CLI::PositiveNumber);
    gc->add_option("--corrupt", corrupt, "Scale one check's analytic gradient by 1.01 (negative test)")
        ->check(CLI::IsMember(gradsuite::check_names()));

    auto* plot = app.add_subcommand("plot-queries", "Render query anchors and detections as SVG");
    plot->add_option("--checkpoint", checkpoint, "Checkpoint stem or .json path")->required();
    plot->add_option("--dataset", dataset_path, "Dataset JSON-lines")->required();
    plot->add_option("--scene", scene_id, "Scene id (first scene when omitted)");
    plot->add_option("--out", out_path, "Output SVG path")->required();
    plot_flags.add_to(*plot);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    std::string command_line;
    for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

    try {
        if (gen->parsed()) return cmd_gen_data(config_path, out_path, seed, out);
        if (tr->parsed()) {
            return cmd_train(config_path, dataset_path, out_path, seed, train_flags, ranking_loss, command_line, out);
        }
        if (ev->parsed()) return cmd_eval(checkpoint, dataset_path, eval_flags, out);
        if (cmp->parsed()) return cmd_compare(runs, dataset_path, out_path, out);
        if (plot->parsed()) return cmd_plot_queries(checkpoint, dataset_path, scene_id, out_path, plot_flags, out);
        if (gc->parsed()) {
            gradsuite::Options options;
            options.cases = cases;
            options.seed = seed.value_or(0);
            options.corrupt = corrupt;
            const auto reports = gradsuite::run(options);
            out << gradsuite::format_report(reports);
            return gradsuite::all_passed(reports) ? kExitOk : kExitRuntime;
        }
    } catch (const UsageFailure& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const raqg::StrategyError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

}  // namespace detlab::cli
