#pragma once

// Named experiment presets. table1-<rule>-<column> covers the rule x
// {baseline, norm-off, phi-off} grid at m = 4:
//   baseline  relu map + attention normalization
//   norm-off  relu map, no normalization
//   phi-off   linear map (no feature map), no normalization
// The delta rule always sum-normalizes keys and queries. decay-baseline is
// not applicable (decay carries no normalizer). table2-* are the m-scaling
// runs (no normalization, no feature map) and the attention baselines.

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fw/corpus.hpp"
#include "fw/model.hpp"
#include "fw/train.hpp"

namespace fw {

struct ExperimentSpec {
  std::string name;
  ModelConfig model;
  TrainConfig train;
  bool applicable = true;   // false for the N/A cell
  std::string expect;       // "diverge-or-degrade" for known-unstable cells
};

// Desk-scale model used by every preset: 4 layers, d_model 128, 4 heads.
ModelConfig desk_model_config();

std::vector<std::string> preset_names();
std::vector<std::string> table1_preset_names();
std::optional<ExperimentSpec> find_preset(const std::string& name);
ExperimentSpec resolve_preset(const std::string& name);  // throws ConfigError

struct AblationOutcome {
  std::string preset;
  std::string rule;
  std::string column;  // baseline | norm-off | phi-off
  std::string status;  // "ppl", "DIVERGED" or "N/A"
  double valid_ppl = 0.0;
  std::optional<std::size_t> diverged_step;
  std::string expect;
};

using SpecAdjust = std::function<void(ExperimentSpec&)>;
using AblationProgress = std::function<void(const AblationOutcome&)>;

// Trains each preset from a seeded initialization and records its best
// validation perplexity or its divergence. `adjust` may shrink the model or
// schedule before each run.
std::vector<AblationOutcome> run_ablation_grid(const CorpusSplits& corpus,
                                               const std::vector<std::string>& presets,
                                               std::uint64_t seed, const SpecAdjust& adjust = {},
                                               const AblationProgress& progress = {});

void write_ablation_csv(std::ostream& out, const std::vector<AblationOutcome>& outcomes);
// 4 rule rows x 3 columns; missing cells print as "-".
void write_ablation_markdown(std::ostream& out, const std::vector<AblationOutcome>& outcomes);

}  // namespace fw
