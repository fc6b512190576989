#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace detlab::gradsuite {

struct Options {
    int cases = 50;  // seeded random cases per check
    std::uint64_t seed = 0;
    // Name of a check whose analytic gradient is deliberately scaled by 1.01.
    std::string corrupt;
};

struct CheckReport {
    std::string name;
    std::string kind;  // "elementwise", "op", "layer", "model", "closed-form"
    int cases = 0;
    double max_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    int redrawn = 0;  // model probes replaced because they sat on a kink
};

// Central finite differences against every differentiable op, the GIoU and
// focal gradients, layers, the ranking head and whole-model spot checks, plus
// the SGL1 backward against its closed form.
std::vector<CheckReport> run(const Options& options = {});

std::vector<std::string> check_names();

bool all_passed(const std::vector<CheckReport>& reports);

std::string format_report(const std::vector<CheckReport>& reports);

}  // namespace detlab::gradsuite
