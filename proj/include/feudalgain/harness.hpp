#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "feudalgain/dialogue.hpp"
#include "feudalgain/feudal_policy.hpp"

namespace feudalgain {

struct Domain {
  Ontology ontology;
  EntityDatabase db;
};

/// Reads ontology.json and db.json from a domain directory.
Domain load_domain(const std::filesystem::path& dir);

struct ExperimentConfig {
  EnvProfile env = EnvProfile::get(1);
  std::optional<bool> masks_override;        // --no-masks
  std::optional<double> error_rate_override;  // noise sweep
  std::filesystem::path domain_dir = "data/cr";
  PolicyConfig policy{};
  int train_dialogues = 4000;
  int eval_every = 200;
  int eval_dialogues = 500;
  /// Explicit checkpoints; when set they replace the eval_every grid.
  std::vector<int> eval_points;
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir = "runs/default";
  bool log_loss = false;
  bool force = false;
  int workers = 1;

  /// Environment after applying the overrides.
  EnvProfile effective_env() const;
  std::vector<int> checkpoints() const;
  void validate() const;
};

/// Applies `key = value` pairs ('#' starts a comment). Unknown keys throw.
void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path);
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

struct MetricsRow {
  std::uint64_t seed = 0;
  std::string env;
  std::string mode;
  int checkpoint = 0;
  double success_rate = 0.0;
  double avg_extrinsic_reward = 0.0;
  double avg_turns = 0.0;
};

struct LossRow {
  std::uint64_t seed = 0;
  int dialogue = 0;
  std::size_t update = 0;
  double loss = 0.0;
};

inline constexpr const char* kMetricsHeader = "seed,env,mode,checkpoint,success_rate,avg_extrinsic_reward,avg_turns";

std::string to_csv(const MetricsRow& r);
MetricsRow parse_metrics_csv_line(const std::string& line);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

/// Greedy evaluation on `n` goals drawn from the (seed, "eval", i) streams.
MetricsRow evaluate_policy(const DialoguePolicy& policy, const EnvProfile& env, const Domain& domain, int n,
                           std::uint64_t seed, int max_turns = 25, const std::string& mode_label = {},
                           int checkpoint = 0);

struct SeedResult {
  std::vector<MetricsRow> metrics;
  std::vector<LossRow> losses;
  std::unique_ptr<PolicySet> policy;
};

/// One training run. Goals and user behaviour come from (seed, "goal"/"user", dialogue)
/// streams, so variants trained with the same seed see the same goal sequence.
SeedResult train_seed(const ExperimentConfig& cfg, const Domain& domain, std::uint64_t seed);

/// Trains every seed, writes per-seed files and the merged metrics.csv.
/// Seeds whose files already exist are read back unless cfg.force.
std::vector<MetricsRow> train(const ExperimentConfig& cfg, const Domain& domain);

struct Aggregate {
  std::string mode;
  int checkpoint = 0;
  double success_mean = 0.0;
  double success_std = 0.0;
  double reward_mean = 0.0;
  double turns_mean = 0.0;
  std::size_t seeds = 0;
};

/// Means over seeds grouped by (mode, checkpoint), ordered by mode then checkpoint.
std::vector<Aggregate> aggregate(const std::vector<MetricsRow>& rows);

/// The four ablation variants: FeudalGain, Feudal+NN, Feudal, Feudal w/o pass.
std::vector<PolicyConfig> ablation_variants(const PolicyConfig& base);
std::vector<MetricsRow> run_ablation_suite(const ExperimentConfig& cfg, const Domain& domain);

struct SweepRow {
  double error_rate = 0.0;
  std::string mode;
  int checkpoint = 0;
  double success_mean = 0.0;
  double success_std = 0.0;
  double reward_mean = 0.0;
};

/// FeudalGain vs Feudal+NN per error rate at checkpoints {200, train_dialogues}.
std::vector<SweepRow> run_noise_sweep(const ExperimentConfig& cfg, const Domain& domain,
                                      const std::vector<double>& rates);

/// Learning-curve SVG (success rate vs dialogues, one line per mode).
std::string render_curves_svg(const std::vector<Aggregate>& rows, const std::string& title);
/// Loss SVG (mean loss per dialogue bucket).
std::string render_loss_svg(const std::vector<LossRow>& rows, const std::string& title);
std::vector<LossRow> read_loss_csv(const std::filesystem::path& path);

}  // namespace feudalgain
