#pragma once

#include <string>
#include <vector>

#include "blindloss/config.hpp"
#include "blindloss/train.hpp"

namespace blindloss {

// Dispatches a full command line (without argv[0]); returns the process exit
// code. 0 = success, 1 = runtime failure, 2 = usage error.
int run_cli(const std::vector<std::string>& args);

struct AblationRow {
    std::string name;
    LossConfig losses;
};

// Loss-flag combinations for an ablation preset. "table4" yields the seven
// rows of the loss ablation grid; "ce" the baseline; "all" the full
// objective; "custom" whatever the base config enables.
std::vector<AblationRow> ablation_rows(const std::string& preset, const TrainConfig& base);

// One complete experiment: build corpora, train, evaluate on the in-domain
// and shifted-domain eval splits.
struct ExperimentOutput {
    TrainResult result;
    MetricsReport source_metrics;
    MetricsReport shifted_metrics;
};
ExperimentOutput execute_training(const TrainConfig& cfg);

// Deterministic serializations shared by the CLI and the tests.
std::string metrics_csv(const std::vector<IterationRow>& history);
Json metrics_to_json(const MetricsReport& report);
Json summary_json(const TrainConfig& cfg, const MetricsReport& source,
                  const MetricsReport& shifted, const std::vector<IterationRow>& history);

}  // namespace blindloss
