// Command-line entry point for training, evaluation, ablations, sweeps,
// plotting, domain generation and the trial server.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "feudalgain/harness.hpp"
#include "feudalgain/service.hpp"

namespace fg = feudalgain;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config;
  std::string env;
  std::string mode;
  std::string domain;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  bool no_pass = false;
  bool no_ig = false;
  bool no_masks = false;
  std::optional<double> delta;
  std::optional<int> dialogues;
  std::optional<int> eval_every;
  std::optional<int> eval_dialogues;
  std::string out;
  bool force = false;
  bool log_loss = false;
  std::optional<int> workers;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "key = value experiment file");
  app->add_option("--env", f.env, "env1..env6");
  app->add_option("--mode", f.mode, "feudalgain | feudal | feudal-nn");
  app->add_option("--domain", f.domain, "domain directory (ontology.json, db.json)");
  app->add_option("--seed", f.seed, "single seed");
  app->add_option("--seeds", f.seeds, "seed list")->delimiter(',');
  app->add_flag("--no-pass", f.no_pass, "drop pass tuples (baseline modes)");
  app->add_flag("--no-ig", f.no_ig, "train the information policy on the extrinsic reward");
  app->add_flag("--no-masks", f.no_masks, "disable action masks");
  app->add_option("--delta", f.delta, "information-gain threshold");
  app->add_option("--dialogues", f.dialogues, "training dialogues per seed");
  app->add_option("--eval-every", f.eval_every, "dialogues between evaluations");
  app->add_option("--eval-dialogues", f.eval_dialogues, "dialogues per evaluation");
  app->add_option("--out", f.out, "output directory");
  app->add_flag("--force", f.force, "rerun seeds that already finished");
  app->add_flag("--log-loss", f.log_loss, "record the replay loss after every update");
  app->add_option("--workers", f.workers, "seeds trained concurrently");
}

fg::ExperimentConfig build_config(const CommonFlags& f) {
  fg::ExperimentConfig cfg;
  cfg.domain_dir = fs::path(FEUDALGAIN_DATA_DIR) / "cr";
  if (!f.config.empty()) fg::apply_config_file(cfg, f.config);
  if (!f.env.empty()) cfg.env = fg::EnvProfile::parse(f.env);
  if (!f.mode.empty()) cfg.policy.mode = fg::parse_policy_mode(f.mode);
  if (!f.domain.empty()) cfg.domain_dir = f.domain;
  if (f.seed) cfg.seeds = {*f.seed};
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (f.no_pass) cfg.policy.pass_tuples = false;
  if (f.no_ig) cfg.policy.info_gain = false;
  if (f.no_masks) cfg.masks_override = false;
  if (f.delta) cfg.policy.reward.delta = *f.delta;
  if (f.dialogues) cfg.train_dialogues = *f.dialogues;
  if (f.eval_every) cfg.eval_every = *f.eval_every;
  if (f.eval_dialogues) cfg.eval_dialogues = *f.eval_dialogues;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.force) cfg.force = true;
  if (f.log_loss) cfg.log_loss = true;
  if (f.workers) cfg.workers = *f.workers;
  cfg.validate();
  return cfg;
}

void print_aggregates(const std::vector<fg::MetricsRow>& rows) {
  std::cout << "mode,checkpoint,seeds,success_mean,success_std,reward_mean,turns_mean\n";
  for (const auto& a : fg::aggregate(rows)) {
    std::cout << fmt::format("{},{},{},{:.4f},{:.4f},{:.3f},{:.3f}\n", a.mode, a.checkpoint, a.seeds, a.success_mean,
                             a.success_std, a.reward_mean, a.turns_mean);
  }
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical dialogue policy training and trial toolkit"};
  app.require_subcommand(0, 1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error");

  CommonFlags train_f, ablate_f, sweep_f;
  auto* train = app.add_subcommand("train", "train policies and write metrics/checkpoints");
  add_common(train, train_f);

  auto* evaluate = app.add_subcommand("evaluate", "greedy evaluation of a checkpoint");
  std::string eval_ckpt, eval_env = "env1", eval_domain;
  int eval_n = 500;
  std::uint64_t eval_seed = 0;
  evaluate->add_option("--checkpoint,--checkpoint-in", eval_ckpt, "checkpoint file or scripted_oracle/always_bye")
      ->required();
  evaluate->add_option("--env", eval_env, "env1..env6");
  evaluate->add_option("--domain", eval_domain, "domain directory");
  evaluate->add_option("--dialogues", eval_n, "evaluation dialogues");
  evaluate->add_option("--seed", eval_seed, "evaluation seed");
  bool eval_no_masks = false;
  evaluate->add_flag("--no-masks", eval_no_masks, "disable action masks");

  auto* ablate = app.add_subcommand("ablate", "FeudalGain, Feudal+NN, Feudal and Feudal w/o pass on one env");
  add_common(ablate, ablate_f);

  auto* sweep = app.add_subcommand("sweep", "error-rate robustness sweep");
  add_common(sweep, sweep_f);
  std::vector<double> rates{0.0, 0.15, 0.30};
  sweep->add_option("--rates", rates, "semantic error rates")->delimiter(',');

  auto* plot = app.add_subcommand("plot", "render learning curves or loss from CSV to SVG");
  std::string plot_in, plot_out, plot_title = "learning curves";
  plot->add_option("input", plot_in, "metrics.csv or loss.csv")->required();
  plot->add_option("-o,--output", plot_out, "SVG file")->required();
  plot->add_option("--title", plot_title, "plot title");

  auto* make_domain = app.add_subcommand("make-domain", "generate db.json for a domain directory");
  std::string md_dir;
  std::size_t md_count = 110;
  std::uint64_t md_seed = 20210601;
  make_domain->add_option("dir", md_dir, "domain directory holding ontology.json")->required();
  make_domain->add_option("--entities", md_count, "number of venues");
  make_domain->add_option("--seed", md_seed, "generation seed");

  auto* serve = app.add_subcommand("serve", "run the trial HTTP service");
  fg::ServiceOptions serve_opts;
  std::vector<std::string> serve_ckpts;
  std::string serve_domain;
  serve->add_option("--checkpoint", serve_ckpts, "policy_id=path (repeatable); path alone uses its file stem");
  serve->add_option("--domain", serve_domain, "domain directory");
  serve->add_option("--host", serve_opts.host, "bind address");
  serve->add_option("--port", serve_opts.port, "port");
  serve->add_option("--log", serve_opts.record_log, "JSON-lines record log");
  serve->add_option("--token", serve_opts.token, "static trial token (empty disables)");
  serve->add_option("--static", serve_opts.static_dir, "directory with a built chat client");

  bool serve_flag = false;
  app.add_flag("--serve", serve_flag, "shorthand for the serve subcommand");
  app.add_option("--port", serve_opts.port, "port for --serve");
  app.add_option("--checkpoint", serve_ckpts, "checkpoint for --serve");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*train) {
      auto cfg = build_config(train_f);
      const auto domain = fg::load_domain(cfg.domain_dir);
      const auto t0 = std::chrono::steady_clock::now();
      const auto rows = fg::train(cfg, domain);
      print_aggregates(rows);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      spdlog::info("training finished in {:.1f} s; results in {}", secs, cfg.output_dir.string());
    } else if (*evaluate) {
      const fs::path dir = eval_domain.empty() ? fs::path(FEUDALGAIN_DATA_DIR) / "cr" : fs::path(eval_domain);
      const auto domain = fg::load_domain(dir);
      nlohmann::json ck = (eval_ckpt == "scripted_oracle" || eval_ckpt == "always_bye")
                              ? fg::pseudo_checkpoint(eval_ckpt)
                              : read_json(eval_ckpt);
      auto policy = fg::load_policy(ck, domain.ontology);
      auto env = fg::EnvProfile::parse(eval_env);
      if (eval_no_masks) env.action_masks = false;
      const int max_turns = ck.value("max_turns", 25);
      const auto row = fg::evaluate_policy(*policy, env, domain, eval_n, eval_seed, max_turns, {},
                                           ck.value("dialogues", 0));
      std::cout << fg::kMetricsHeader << "\n" << fg::to_csv(row) << "\n";
    } else if (*ablate) {
      auto cfg = build_config(ablate_f);
      const auto domain = fg::load_domain(cfg.domain_dir);
      print_aggregates(fg::run_ablation_suite(cfg, domain));
    } else if (*sweep) {
      auto cfg = build_config(sweep_f);
      const auto domain = fg::load_domain(cfg.domain_dir);
      std::cout << "error_rate,mode,checkpoint,success_mean,success_std,reward_mean\n";
      for (const auto& r : fg::run_noise_sweep(cfg, domain, rates)) {
        std::cout << fmt::format("{:.2f},{},{},{:.4f},{:.4f},{:.3f}\n", r.error_rate, r.mode, r.checkpoint,
                                 r.success_mean, r.success_std, r.reward_mean);
      }
    } else if (*plot) {
      std::ifstream in(plot_in);
      std::string header;
      std::getline(in, header);
      std::string svg;
      if (header.rfind("seed,dialogue,update,loss", 0) == 0) {
        svg = fg::render_loss_svg(fg::read_loss_csv(plot_in), plot_title);
      } else {
        svg = fg::render_curves_svg(fg::aggregate(fg::read_metrics_csv(plot_in)), plot_title);
      }
      std::ofstream(plot_out) << svg;
    } else if (*make_domain) {
      const fs::path dir(md_dir);
      const auto onto = fg::load_ontology(dir / "ontology.json");
      const fg::EntityDatabase db(onto, fg::generate_entities(onto, md_count, md_seed));
      std::ofstream(dir / "db.json") << db.to_json().dump(1) << "\n";
      spdlog::info("wrote {} venues to {}", db.size(), (dir / "db.json").string());
    } else if (*serve || serve_flag) {
      const fs::path dir = serve_domain.empty() ? fs::path(FEUDALGAIN_DATA_DIR) / "cr" : fs::path(serve_domain);
      auto domain = std::make_shared<const fg::Domain>(fg::load_domain(dir));
      auto templates = fg::TemplateSet::load(dir / "templates.txt");
      fg::DialogueService service(domain, std::move(templates), serve_opts.record_log);
      if (serve_ckpts.empty()) serve_ckpts.push_back("scripted_oracle");
      for (const auto& spec : serve_ckpts) {
        std::string id = spec, path = spec;
        if (auto eq = spec.find('='); eq != std::string::npos) {
          id = spec.substr(0, eq);
          path = spec.substr(eq + 1);
        } else if (spec != "scripted_oracle" && spec != "always_bye") {
          id = fs::path(spec).stem().string();
        }
        const auto ck = (path == "scripted_oracle" || path == "always_bye") ? fg::pseudo_checkpoint(path)
                                                                            : read_json(path);
        service.add_policy(id, fg::load_policy(ck, domain->ontology));
        spdlog::info("policy '{}' loaded", id);
      }
      fg::run_server(service, serve_opts);
    } else {
      std::cout << app.help();
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
