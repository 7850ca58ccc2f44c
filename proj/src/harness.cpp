#include "feudalgain/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

namespace feudalgain {

namespace fs = std::filesystem;

Domain load_domain(const fs::path& dir) {
  Domain d;
  d.ontology = load_ontology(dir / "ontology.json");
  d.db = load_database(d.ontology, dir / "db.json");
  if (d.db.empty()) throw DomainError("database in " + dir.string() + " has no entities");
  return d;
}

EnvProfile ExperimentConfig::effective_env() const {
  EnvProfile e = env;
  if (masks_override) e.action_masks = *masks_override;
  if (error_rate_override) e.semantic_error_rate = *error_rate_override;
  return e;
}

std::vector<int> ExperimentConfig::checkpoints() const {
  std::vector<int> out;
  if (!eval_points.empty()) {
    out = eval_points;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
  for (int d = eval_every; d <= train_dialogues; d += eval_every) out.push_back(d);
  return out;
}

void ExperimentConfig::validate() const {
  if (train_dialogues <= 0) throw std::invalid_argument("train_dialogues must be positive");
  if (eval_dialogues <= 0) throw std::invalid_argument("eval_dialogues must be positive");
  if (eval_points.empty()) {
    if (eval_every <= 0 || train_dialogues % eval_every != 0) {
      throw std::invalid_argument("eval_every must divide train_dialogues");
    }
  }
  for (int p : eval_points) {
    if (p <= 0 || p > train_dialogues) throw std::invalid_argument("evaluation point outside the training run");
  }
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  if (workers < 1) throw std::invalid_argument("workers must be at least 1");
  const auto e = effective_env();
  if (!(e.semantic_error_rate >= 0.0 && e.semantic_error_rate <= 1.0)) {
    throw std::invalid_argument("error rate must lie in [0,1]");
  }
  policy.reward.validate();
}

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    if constexpr (std::is_floating_point_v<T>) {
      out.push_back(static_cast<T>(std::stod(item)));
    } else {
      out.push_back(static_cast<T>(std::stoull(item)));
    }
  }
  return out;
}

}  // namespace

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "env") cfg.env = EnvProfile::parse(v);
  else if (key == "domain") cfg.domain_dir = v;
  else if (key == "mode") cfg.policy.mode = parse_policy_mode(v);
  else if (key == "no_pass") cfg.policy.pass_tuples = !parse_bool(v);
  else if (key == "no_ig") cfg.policy.info_gain = !parse_bool(v);
  else if (key == "no_masks") cfg.masks_override = parse_bool(v) ? std::optional<bool>(false) : std::nullopt;
  else if (key == "error_rate") cfg.error_rate_override = std::stod(v);
  else if (key == "delta") cfg.policy.reward.delta = std::stod(v);
  else if (key == "divergence") {
    if (v == "js") cfg.policy.reward.divergence = Divergence::jensen_shannon;
    else if (v == "kl") cfg.policy.reward.divergence = Divergence::kullback_leibler;
    else throw std::invalid_argument("divergence must be js or kl");
  }
  else if (key == "gamma") cfg.policy.dqn.gamma = cfg.policy.acer.gamma = std::stod(v);
  else if (key == "lr_info") cfg.policy.dqn.adam.lr = std::stod(v);
  else if (key == "lr_master") cfg.policy.acer.adam.lr = std::stod(v);
  else if (key == "sigma0") cfg.policy.sigma0 = std::stod(v);
  else if (key == "epsilon_start") cfg.policy.epsilon_start = std::stod(v);
  else if (key == "epsilon_end") cfg.policy.epsilon_end = std::stod(v);
  else if (key == "master_hidden") cfg.policy.master_hidden = parse_list<std::size_t>(v);
  else if (key == "slot_hidden") cfg.policy.slot_hidden = parse_list<std::size_t>(v);
  else if (key == "batch") cfg.policy.dqn.batch = std::stoul(v);
  else if (key == "replay_updates") cfg.policy.acer.replay_updates = std::stoul(v);
  else if (key == "max_turns") cfg.policy.max_turns = std::stoi(v);
  else if (key == "train_dialogues") cfg.train_dialogues = std::stoi(v);
  else if (key == "eval_every") cfg.eval_every = std::stoi(v);
  else if (key == "eval_dialogues") cfg.eval_dialogues = std::stoi(v);
  else if (key == "eval_points") {
    cfg.eval_points.clear();
    for (auto p : parse_list<std::uint64_t>(v)) cfg.eval_points.push_back(static_cast<int>(p));
  }
  else if (key == "seeds") cfg.seeds = parse_list<std::uint64_t>(v);
  else if (key == "output_dir") cfg.output_dir = v;
  else if (key == "log_loss") cfg.log_loss = parse_bool(v);
  else if (key == "workers") cfg.workers = std::stoi(v);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

void apply_config_file(ExperimentConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(fmt::format("{}:{}: expected key = value", path.string(), lineno));
    }
    try {
      apply_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const std::exception& e) {
      throw std::invalid_argument(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
}

// ---------------------------------------------------------------------------

std::string to_csv(const MetricsRow& r) {
  return fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f}", r.seed, r.env, r.mode, r.checkpoint, r.success_rate,
                     r.avg_extrinsic_reward, r.avg_turns);
}

MetricsRow parse_metrics_csv_line(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  if (f.size() != 7) throw std::runtime_error("metrics row needs 7 fields: " + line);
  return {std::stoull(f[0]), f[1], f[2], std::stoi(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6])};
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  std::getline(in, line);
  if (trim(line) != kMetricsHeader) throw std::runtime_error(path.string() + " is not a metrics file");
  while (std::getline(in, line)) {
    if (!trim(line).empty()) rows.push_back(parse_metrics_csv_line(trim(line)));
  }
  return rows;
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string metrics_text(const std::vector<MetricsRow>& rows) {
  std::string s = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) s += to_csv(r) + "\n";
  return s;
}

std::string loss_text(const std::vector<LossRow>& rows) {
  std::string s = "seed,dialogue,update,loss\n";
  for (const auto& r : rows) s += fmt::format("{},{},{},{:.6f}\n", r.seed, r.dialogue, r.update, r.loss);
  return s;
}

}  // namespace

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRow>& rows) {
  write_file(path, metrics_text(rows));
}

std::vector<LossRow> read_loss_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<LossRow> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string a, b, c, d;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ',') || !std::getline(ss, d)) {
      continue;
    }
    rows.push_back({std::stoull(a), std::stoi(b), std::stoul(c), std::stod(d)});
  }
  return rows;
}

// ---------------------------------------------------------------------------

MetricsRow evaluate_policy(const DialoguePolicy& policy, const EnvProfile& env, const Domain& domain, int n,
                           std::uint64_t seed, int max_turns, const std::string& mode_label, int checkpoint) {
  if (n <= 0) throw std::invalid_argument("evaluation needs at least one dialogue");
  DialogueOptions opts;
  opts.max_turns = max_turns;
  opts.train = false;
  double successes = 0.0, reward = 0.0, turns = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    Rng goal_rng = Rng::derive(seed, {Rng::tag("eval"), idx});
    Rng user_rng = Rng::derive(seed, {Rng::tag("eval-user"), idx});
    Rng policy_rng = Rng::derive(seed, {Rng::tag("eval-policy"), idx});
    const auto goal = sample_goal(domain.ontology, domain.db, goal_rng, opts.user);
    const auto ep = run_dialogue(policy, env, domain.ontology, domain.db, goal, user_rng, policy_rng, opts);
    successes += ep.success ? 1.0 : 0.0;
    reward += ep.total_reward;
    turns += static_cast<double>(ep.length());
  }
  MetricsRow row;
  row.seed = seed;
  row.env = env.name();
  row.mode = mode_label.empty() ? policy.kind() : mode_label;
  row.checkpoint = checkpoint;
  row.success_rate = successes / n;
  row.avg_extrinsic_reward = reward / n;
  row.avg_turns = turns / n;
  return row;
}

SeedResult train_seed(const ExperimentConfig& cfg, const Domain& domain, std::uint64_t seed) {
  cfg.validate();
  const EnvProfile env = cfg.effective_env();
  SeedResult result;
  result.policy = std::make_unique<PolicySet>(cfg.policy, domain.ontology, seed);
  auto& ps = *result.policy;
  const auto points = cfg.checkpoints();
  auto next_point = points.begin();

  DialogueOptions opts;
  opts.max_turns = cfg.policy.max_turns;
  opts.train = true;
  opts.reward = cfg.policy.reward;

  const double n = cfg.train_dialogues;
  for (int d = 1; d <= cfg.train_dialogues; ++d) {
    if (cfg.policy.mode == PolicyMode::feudal) {
      ps.set_epsilon(cfg.policy.epsilon_start + (cfg.policy.epsilon_end - cfg.policy.epsilon_start) * (d - 1) / n);
    }
    const auto idx = static_cast<std::uint64_t>(d);
    Rng goal_rng = Rng::derive(seed, {Rng::tag("goal"), idx});
    Rng user_rng = Rng::derive(seed, {Rng::tag("user"), idx});
    Rng policy_rng = Rng::derive(seed, {Rng::tag("policy"), idx});
    const auto goal = sample_goal(domain.ontology, domain.db, goal_rng, opts.user);
    const auto ep = run_dialogue(ps, env, domain.ontology, domain.db, goal, user_rng, policy_rng, opts);
    const auto stats = ps.observe(ep, domain.ontology, domain.db, env.action_masks, cfg.log_loss);
    if (stats.slot_loss) result.losses.push_back({seed, d, ps.info().updates(), *stats.slot_loss});

    if (next_point != points.end() && d == *next_point) {
      auto row = evaluate_policy(ps, env, domain, cfg.eval_dialogues, seed, cfg.policy.max_turns, cfg.policy.label(), d);
      spdlog::info("seed {} {} {} after {:>5} dialogues: success {:.3f}, reward {:.2f}, turns {:.2f}", seed,
                   row.mode, row.env, d, row.success_rate, row.avg_extrinsic_reward, row.avg_turns);
      result.metrics.push_back(std::move(row));
      ++next_point;
    }
  }
  return result;
}

std::vector<MetricsRow> train(const ExperimentConfig& cfg, const Domain& domain) {
  cfg.validate();
  const auto& seeds = cfg.seeds;
  std::vector<std::vector<MetricsRow>> per_seed(seeds.size());
  std::vector<std::vector<LossRow>> per_loss(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());

  auto run_one = [&](std::size_t i) {
    try {
      const auto seed = seeds[i];
      const fs::path dir = cfg.output_dir / fmt::format("seed_{}", seed);
      const fs::path metrics = dir / "metrics.csv", checkpoint = dir / "checkpoint.json", loss = dir / "loss.csv";
      if (!cfg.force && fs::exists(checkpoint) && fs::exists(metrics)) {
        spdlog::info("seed {} already finished in {}; skipping (use --force to rerun)", seed, dir.string());
        per_seed[i] = read_metrics_csv(metrics);
        if (fs::exists(loss)) per_loss[i] = read_loss_csv(loss);
        return;
      }
      auto res = train_seed(cfg, domain, seed);
      write_file(metrics, metrics_text(res.metrics));
      if (cfg.log_loss) write_file(loss, loss_text(res.losses));
      write_file(checkpoint, res.policy->checkpoint(domain.ontology).dump());
      per_seed[i] = std::move(res.metrics);
      per_loss[i] = std::move(res.losses);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), seeds.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<MetricsRow> all;
  std::vector<LossRow> losses;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    all.insert(all.end(), per_seed[i].begin(), per_seed[i].end());
    losses.insert(losses.end(), per_loss[i].begin(), per_loss[i].end());
  }
  write_file(cfg.output_dir / "metrics.csv", metrics_text(all));
  if (cfg.log_loss) write_file(cfg.output_dir / "loss.csv", loss_text(losses));
  return all;
}

std::vector<Aggregate> aggregate(const std::vector<MetricsRow>& rows) {
  std::map<std::pair<std::string, int>, std::vector<const MetricsRow*>> groups;
  for (const auto& r : rows) groups[{r.mode, r.checkpoint}].push_back(&r);
  std::vector<Aggregate> out;
  for (const auto& [key, group] : groups) {
    Aggregate a;
    a.mode = key.first;
    a.checkpoint = key.second;
    a.seeds = group.size();
    for (const auto* r : group) {
      a.success_mean += r->success_rate;
      a.reward_mean += r->avg_extrinsic_reward;
      a.turns_mean += r->avg_turns;
    }
    const double n = static_cast<double>(group.size());
    a.success_mean /= n;
    a.reward_mean /= n;
    a.turns_mean /= n;
    double var = 0.0;
    for (const auto* r : group) var += (r->success_rate - a.success_mean) * (r->success_rate - a.success_mean);
    a.success_std = std::sqrt(var / n);
    out.push_back(a);
  }
  return out;
}

std::vector<PolicyConfig> ablation_variants(const PolicyConfig& base) {
  PolicyConfig gain = base;
  gain.mode = PolicyMode::feudalgain;
  gain.pass_tuples = true;
  gain.info_gain = true;
  PolicyConfig nn = base;
  nn.mode = PolicyMode::feudal_nn;
  nn.pass_tuples = true;
  PolicyConfig feudal = base;
  feudal.mode = PolicyMode::feudal;
  feudal.pass_tuples = true;
  PolicyConfig nopass = feudal;
  nopass.pass_tuples = false;
  return {gain, nn, feudal, nopass};
}

std::vector<MetricsRow> run_ablation_suite(const ExperimentConfig& cfg, const Domain& domain) {
  std::vector<MetricsRow> all;
  for (const auto& variant : ablation_variants(cfg.policy)) {
    ExperimentConfig c = cfg;
    c.policy = variant;
    c.output_dir = cfg.output_dir / variant.label();
    auto rows = train(c, domain);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_file(cfg.output_dir / "metrics.csv", metrics_text(all));
  return all;
}

std::vector<SweepRow> run_noise_sweep(const ExperimentConfig& cfg, const Domain& domain,
                                      const std::vector<double>& rates) {
  std::vector<SweepRow> out;
  std::string text = "error_rate,mode,checkpoint,success_mean,success_std,reward_mean\n";
  for (double rate : rates) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("error rates must lie in [0,1]");
    for (auto mode : {PolicyMode::feudalgain, PolicyMode::feudal_nn}) {
      ExperimentConfig c = cfg;
      c.policy.mode = mode;
      c.policy.pass_tuples = true;
      c.policy.info_gain = true;
      c.error_rate_override = rate;
      c.eval_points = {std::min(200, cfg.train_dialogues), cfg.train_dialogues};
      c.output_dir = cfg.output_dir / fmt::format("rate_{:.2f}", rate) / c.policy.label();
      for (const auto& a : aggregate(train(c, domain))) {
        out.push_back({rate, a.mode, a.checkpoint, a.success_mean, a.success_std, a.reward_mean});
        text += fmt::format("{:.2f},{},{},{:.6f},{:.6f},{:.6f}\n", rate, a.mode, a.checkpoint, a.success_mean,
                            a.success_std, a.reward_mean);
      }
    }
  }
  write_file(cfg.output_dir / "sweep.csv", text);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Frame {
  double w = 640, h = 400, left = 60, right = 160, top = 40, bottom = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (w - left - right); }
  double py(double y) const { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); }
};

std::string svg_frame(const Frame& f, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      f.w, f.h);
  s += fmt::format("<text x=\"{}\" y=\"22\" font-size=\"14\">{}</text>\n", f.left, title);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", f.px(f.x0), f.py(f.y0),
                   f.px(f.x1));
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", f.px(f.x0), f.py(f.y0),
                   f.py(f.y1));
  for (int i = 0; i <= 5; ++i) {
    const double x = f.x0 + (f.x1 - f.x0) * i / 5.0;
    const double y = f.y0 + (f.y1 - f.y0) * i / 5.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:g}</text>\n", f.px(x), f.py(f.y0) + 16, x);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", f.px(f.x0) - 6, f.py(y) + 4, y);
  }
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", (f.px(f.x0) + f.px(f.x1)) / 2,
                   f.h - 12, xlabel);
  s += fmt::format("<text x=\"14\" y=\"{:.1f}\" transform=\"rotate(-90 14 {:.1f})\" text-anchor=\"middle\">{}</text>\n",
                   (f.py(f.y0) + f.py(f.y1)) / 2, (f.py(f.y0) + f.py(f.y1)) / 2, ylabel);
  return s;
}

}  // namespace

std::string render_curves_svg(const std::vector<Aggregate>& rows, const std::string& title) {
  Frame f;
  std::map<std::string, std::vector<const Aggregate*>> lines;
  for (const auto& r : rows) {
    lines[r.mode].push_back(&r);
    f.x1 = std::max(f.x1, static_cast<double>(r.checkpoint));
  }
  std::string s = svg_frame(f, title, "training dialogues", "success rate");
  std::size_t k = 0;
  for (const auto& [mode, pts] : lines) {
    const char* colour = kPalette[k % std::size(kPalette)];
    std::string path;
    for (const auto* p : pts) path += fmt::format("{:.1f},{:.1f} ", f.px(p->checkpoint), f.py(p->success_mean));
    s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", colour, path);
    const double ly = f.top + 20.0 * static_cast<double>(k);
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"12\" height=\"3\" fill=\"{}\"/>\n", f.w - f.right + 15,
                     ly, colour);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", f.w - f.right + 32, ly + 5, mode);
    ++k;
  }
  return s + "</svg>\n";
}

std::string render_loss_svg(const std::vector<LossRow>& rows, const std::string& title) {
  Frame f;
  std::map<int, std::pair<double, int>> buckets;
  int last = 1;
  for (const auto& r : rows) last = std::max(last, r.dialogue);
  const int width = std::max(1, last / 50);
  double ymax = 1e-9;
  for (const auto& r : rows) {
    auto& b = buckets[(r.dialogue - 1) / width];
    b.first += r.loss;
    b.second += 1;
  }
  for (const auto& [k, b] : buckets) ymax = std::max(ymax, b.first / b.second);
  f.x1 = last;
  f.y1 = ymax;
  std::string s = svg_frame(f, title, "training dialogues", "replay loss");
  std::string path;
  for (const auto& [k, b] : buckets) {
    path += fmt::format("{:.1f},{:.1f} ", f.px((k + 0.5) * width), f.py(b.first / b.second));
  }
  s += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", kPalette[0], path);
  return s + "</svg>\n";
}

}  // namespace feudalgain
