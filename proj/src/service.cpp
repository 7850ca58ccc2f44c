#include "feudalgain/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include <httplib.h>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

namespace feudalgain {

std::string normalise_text(const std::string& text) {
  std::string out = " ";
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      out += static_cast<char>(std::tolower(c));
    } else if (c == '\'') {
      continue;  // "don't" -> "dont"
    } else if (out.back() != ' ') {
      out += ' ';
    }
  }
  if (out.back() != ' ') out += ' ';
  return out;
}

namespace {

bool contains(const std::string& hay, const std::string& phrase) { return hay.find(phrase) != std::string::npos; }

std::string pad(const std::string& s) { return normalise_text(s); }

std::vector<std::string> tokens(const std::string& norm) {
  std::vector<std::string> out;
  std::stringstream ss(norm);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

// Levenshtein distance, giving up above `limit`.
std::size_t edit_distance(const std::string& a, const std::string& b, std::size_t limit) {
  if (a.size() > b.size() + limit || b.size() > a.size() + limit) return limit + 1;
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

const std::vector<std::string> kDontCarePhrases{" dont care ", " do not care ", " doesnt matter ", " does not matter ",
                                         " any ", " anything ", " whatever ", " no preference "};
const std::vector<std::string> kAffirm{" yes ", " yeah ", " yep ", " correct ", " right ", " sure "};
const std::vector<std::string> kNegate{" no ", " nope ", " not ", " wrong ", " nah "};
const std::vector<std::string> kBye{" bye ", " goodbye ", " thats all ", " thank you bye "};
const std::vector<std::string> kHello{" hello ", " hi ", " hey "};
const std::vector<std::string> kRepeat{" repeat ", " say again ", " say that again "};
const std::vector<std::string> kQuestion{" what ", " which ", " whats ", " tell me "};

bool any_of(const std::string& t, const std::vector<std::string>& phrases) {
  return std::any_of(phrases.begin(), phrases.end(), [&](const std::string& p) { return contains(t, p); });
}

}  // namespace

RuleNlu::RuleNlu(const Ontology& ontology) : ontology_(&ontology) {
  for (std::size_t s = 0; s < ontology.slot_count(); ++s) {
    const auto& slot = ontology.slot(s);
    for (const auto& v : slot.values) values_.push_back({pad(v), s, v, kExact});
    for (const auto& [v, syns] : slot.value_synonyms) {
      for (const auto& syn : syns) values_.push_back({pad(syn), s, v, kFuzzy});
    }
    slot_aliases_.push_back({pad(slot.name), s});
    for (const auto& a : slot.aliases) slot_aliases_.push_back({pad(a), s});
  }
  // Longer phrases first so "city centre" wins over "centre".
  std::stable_sort(values_.begin(), values_.end(), [](const Pattern& a, const Pattern& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.phrase.size() > b.phrase.size();
  });
  for (const auto& r : ontology.requestable()) {
    if (ontology.is_informable(r)) continue;
    request_aliases_.push_back({pad(r), r});
    if (auto it = ontology.requestable_aliases().find(r); it != ontology.requestable_aliases().end()) {
      for (const auto& a : it->second) request_aliases_.push_back({pad(a), r});
    }
  }
}

std::vector<DialogueAct> RuleNlu::parse(const std::string& text, const DialogueAct* context) const {
  const std::string t = normalise_text(text);
  const std::size_t n = ontology_->slot_count();
  std::vector<std::optional<std::pair<std::string, double>>> informed(n);

  const bool dontcare = any_of(t, kDontCarePhrases);
  bool dontcare_from_context = false;
  if (dontcare) {
    bool named = false;
    for (const auto& [phrase, s] : slot_aliases_) {
      if (contains(t, phrase) && !informed[s]) {
        informed[s] = {std::string(kDontCare), kExact};
        named = true;
      }
    }
    dontcare_from_context = !named;
  }

  for (const auto& p : values_) {
    if (!informed[p.slot] && contains(t, p.phrase)) informed[p.slot] = {p.value, p.confidence};
  }
  // Near-miss spellings of values.
  for (const auto& w : tokens(t)) {
    if (w.size() < 5) continue;
    for (std::size_t s = 0; s < n; ++s) {
      if (informed[s]) continue;
      for (const auto& v : ontology_->slot(s).values) {
        if (v.size() >= 5 && edit_distance(w, v, 1) == 1) {
          informed[s] = {v, kFuzzy};
          break;
        }
      }
    }
  }

  // "I don't care" answering a request for a slot the user did not fill.
  if (dontcare_from_context && context &&
      (context->type == ActType::request || context->type == ActType::select) && !context->items.empty()) {
    if (auto s = ontology_->slot_index(context->items.front().slot); s && !informed[*s]) {
      informed[*s] = {std::string(kDontCare), kExact};
    }
  }

  std::vector<DialogueAct> acts;
  if (any_of(t, kAffirm)) {
    acts.push_back(DialogueAct::of(ActType::affirm));
  } else if (!dontcare && any_of(t, kNegate)) {
    acts.push_back(DialogueAct::of(ActType::negate));
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (!informed[s]) continue;
    auto a = DialogueAct::inform(ontology_->slot(s).name, informed[s]->first);
    a.confidence = informed[s]->second;
    acts.push_back(std::move(a));
  }
  std::vector<std::string> requested;
  for (const auto& [phrase, r] : request_aliases_) {
    if (contains(t, phrase) && std::find(requested.begin(), requested.end(), r) == requested.end()) {
      requested.push_back(r);
    }
  }
  if (any_of(t, kQuestion)) {
    for (const auto& [phrase, s] : slot_aliases_) {
      const auto& name = ontology_->slot(s).name;
      if (contains(t, phrase) && !informed[s] && std::find(requested.begin(), requested.end(), name) == requested.end()) {
        requested.push_back(name);
      }
    }
  }
  for (auto& r : requested) acts.push_back(DialogueAct::request(r));
  if (any_of(t, kBye)) acts.push_back(DialogueAct::of(ActType::bye));
  if (acts.empty() && any_of(t, kRepeat)) acts.push_back(DialogueAct::of(ActType::repeat));
  if (acts.empty() && any_of(t, kHello)) acts.push_back(DialogueAct::of(ActType::hello));
  if (acts.empty()) acts.push_back(DialogueAct::of(ActType::null));
  return acts;
}

// ---------------------------------------------------------------------------

TemplateSet TemplateSet::parse(const std::string& text) {
  TemplateSet ts;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(fmt::format("template line {}: expected key = text", lineno));
    auto key = line.substr(0, eq);
    auto val = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    val.erase(0, val.find_first_not_of(" \t"));
    ts.templates_[key] = val;
  }
  return ts;
}

TemplateSet TemplateSet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open template file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string* TemplateSet::find(const std::string& act, const std::string& slot) const {
  if (!slot.empty()) {
    if (auto it = templates_.find(act + ":" + slot); it != templates_.end()) return &it->second;
  }
  if (auto it = templates_.find(act); it != templates_.end()) return &it->second;
  return nullptr;
}

namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
}

}  // namespace

std::string TemplateSet::render(const DialogueAct& act) const {
  const std::string type(to_string(act.type));
  if (act.type == ActType::inform) {
    std::string name;
    std::vector<std::string> details;
    for (const auto& item : act.items) {
      if (item.slot == kNameKey) {
        name = item.value;
        continue;
      }
      const std::string* frag = find("item", item.slot);
      std::string d = frag ? *frag : "{slot} {value}";
      replace_all(d, "{slot}", item.slot);
      replace_all(d, "{value}", item.value);
      details.push_back(std::move(d));
    }
    if (name.empty() || name == kNone) {
      const std::string* none = find("inform", "none");
      return none ? *none : "I could not find a matching venue.";
    }
    std::string joined;
    for (std::size_t i = 0; i < details.size(); ++i) {
      joined += (i == 0 ? "" : (i + 1 == details.size() ? " and " : ", ")) + details[i];
    }
    const std::string* tpl = find("inform", "");
    std::string out = tpl ? *tpl : "{name} matches: {details}.";
    replace_all(out, "{name}", name);
    replace_all(out, "{details}", joined);
    return out;
  }
  const std::string slot = act.items.empty() ? std::string() : act.items.front().slot;
  const std::string* tpl = find(type, slot);
  if (!tpl) return act.str();
  std::string out = *tpl;
  replace_all(out, "{slot}", slot);
  if (!act.items.empty()) replace_all(out, "{value}", act.items.front().value);
  for (std::size_t i = 0; i < act.items.size(); ++i) replace_all(out, fmt::format("{{value{}}}", i + 1), act.items[i].value);
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::awaiting_questionnaire: return "awaiting_questionnaire";
    case SessionStatus::closed: return "closed";
  }
  return "?";
}

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int score(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer()) {
    throw ServiceError(422, fmt::format("'{}' must be an integer from 1 to 5", key));
  }
  const int v = j.at(key).get<int>();
  if (v < 1 || v > 5) throw ServiceError(422, fmt::format("'{}' must be between 1 and 5, got {}", key, v));
  return v;
}

}  // namespace

QuestionnaireRecord QuestionnaireRecord::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ServiceError(422, "questionnaire body must be a JSON object");
  QuestionnaireRecord r;
  if (!j.contains("success")) throw ServiceError(422, "'success' is required");
  const auto& s = j.at("success");
  if (s.is_boolean()) {
    r.success = s.get<bool>();
  } else if (s.is_string() && (s == "yes" || s == "no")) {
    r.success = s == "yes";
  } else {
    throw ServiceError(422, "'success' must be yes/no or a boolean");
  }
  r.ask_if_nec = score(j, "ask_if_nec");
  r.overall = score(j, "overall");
  return r;
}

DialogueService::DialogueService(std::shared_ptr<const Domain> domain, TemplateSet templates,
                                 std::filesystem::path record_log)
    : domain_(std::move(domain)), templates_(std::move(templates)), nlu_(domain_->ontology),
      log_path_(std::move(record_log)) {
  load_records();
}

void DialogueService::load_records() {
  if (log_path_.empty() || !std::filesystem::exists(log_path_)) return;
  std::ifstream in(log_path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      spdlog::warn("skipping unreadable record line in {}", log_path_.string());
      continue;
    }
    closed_.push_back({j.at("policy").get<std::string>(), j.at("success").get<bool>() ? 1.0 : 0.0,
                       j.at("turns").get<double>(), j.at("ask_if_nec").get<double>(), j.at("overall").get<double>()});
    next_id_ = std::max<std::uint64_t>(next_id_, closed_.size() + 1);
  }
}

void DialogueService::add_policy(const std::string& id, std::shared_ptr<const DialoguePolicy> policy) {
  if (id.empty() || !policy) throw std::invalid_argument("policy needs an id and an instance");
  std::lock_guard lock(mu_);
  policies_[id] = std::move(policy);
}

std::vector<std::string> DialogueService::policy_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, p] : policies_) out.push_back(id);
  return out;
}

std::shared_ptr<DialogueService::Session> DialogueService::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
  return it->second;
}

SessionReply DialogueService::create_session(const std::string& policy_id) {
  auto session = std::make_shared<Session>();
  {
    std::lock_guard lock(mu_);
    std::string pid = policy_id;
    if (pid.empty() && policies_.size() == 1) pid = policies_.begin()->first;
    auto it = policies_.find(pid);
    if (it == policies_.end()) throw ServiceError(404, "unknown policy '" + policy_id + "'");
    static thread_local std::mt19937_64 gen{std::random_device{}()};
    session->id = fmt::format("{}-{:08x}", next_id_++, static_cast<std::uint32_t>(gen()));
    session->policy_id = pid;
    session->policy = it->second;
    sessions_[session->id] = session;
  }
  session->belief = initial_belief(domain_->ontology);
  session->last_system_act = DialogueAct::of(ActType::hello);
  const std::string greeting = templates_.render(session->last_system_act);
  return {session->id, greeting, SessionStatus::active, {}};
}

SessionReply DialogueService::user_turn(const std::string& session_id, const std::string& text) {
  auto session = find(session_id);
  std::lock_guard lock(session->mu);
  if (session->status != SessionStatus::active) {
    throw ServiceError(409, "session '" + session_id + "' is " + std::string(to_string(session->status)));
  }
  const auto& onto = domain_->ontology;
  TranscriptTurn turn;
  turn.user_text = text;
  turn.user_acts = nlu_.parse(text, &session->last_system_act);
  session->belief = focus_update(session->belief, evidence_from_acts(turn.user_acts, &session->last_system_act, onto));

  const bool user_bye = std::any_of(turn.user_acts.begin(), turn.user_acts.end(),
                                    [](const DialogueAct& a) { return a.type == ActType::bye; });
  SystemTurn sys;
  if (user_bye) {
    sys = SystemTurn{{ActionKind::bye, -1}, DialogueAct::of(ActType::bye), std::nullopt};
  } else {
    Rng unused(0);
    const DecisionContext ctx{onto, domain_->db, true, false};
    const auto decision = session->policy->decide(session->belief, ctx, unused);
    sys = realise_action(decision.action, session->belief, onto, domain_->db);
  }
  session->belief = apply_system_act(session->belief, sys.action, sys.act, sys.entity, onto);
  turn.system_act = sys.act;
  turn.system_text = templates_.render(sys.act);
  session->last_system_act = sys.act;
  if (sys.act.type == ActType::bye) session->status = SessionStatus::awaiting_questionnaire;

  SessionReply reply{session->id, turn.system_text, session->status, {}};
  auto parsed = nlohmann::json::array();
  for (const auto& a : turn.user_acts) parsed.push_back(a.to_json());
  auto beliefs = nlohmann::json::object();
  for (std::size_t s = 0; s < onto.slot_count(); ++s) {
    const auto& d = session->belief.slot(s);
    const auto top = d.top();
    const std::string value = top < d.value_count() ? onto.slot(s).values[top]
                              : top == d.dontcare_index() ? std::string(kDontCare)
                                                          : std::string(kNone);
    beliefs[onto.slot(s).name] = {{"top", value}, {"p", d.probs[top]}};
  }
  reply.debug = {{"parsed", parsed}, {"system_act", sys.act.to_json()}, {"belief", beliefs},
                 {"turn", session->belief.turn}};
  session->transcript.push_back(std::move(turn));
  return reply;
}

SessionStatus DialogueService::status(const std::string& session_id) const {
  auto session = find(session_id);
  std::lock_guard lock(session->mu);
  return session->status;
}

void DialogueService::append_record(const nlohmann::json& line) {
  if (log_path_.empty()) return;
  std::lock_guard lock(log_mu_);
  std::ofstream out(log_path_, std::ios::app);
  if (!out) throw ServiceError(500, "cannot append to record log " + log_path_.string());
  out << line.dump() << "\n";
  if (!out.flush()) throw ServiceError(500, "failed to write record log");
}

void DialogueService::submit_questionnaire(const std::string& session_id, const nlohmann::json& body) {
  auto session = find(session_id);
  std::lock_guard lock(session->mu);
  if (session->status == SessionStatus::closed) throw ServiceError(409, "questionnaire already submitted");
  if (session->status != SessionStatus::awaiting_questionnaire) {
    throw ServiceError(409, "dialogue has not ended yet");
  }
  auto rec = QuestionnaireRecord::from_json(body);
  rec.session_id = session_id;
  rec.timestamp = now_iso8601();

  nlohmann::json transcript = nlohmann::json::array();
  for (const auto& t : session->transcript) {
    auto acts = nlohmann::json::array();
    for (const auto& a : t.user_acts) acts.push_back(a.to_json());
    transcript.push_back({{"user_text", t.user_text}, {"user_acts", acts}, {"system_act", t.system_act.to_json()},
                          {"system_text", t.system_text}});
  }
  const auto turns = static_cast<double>(session->transcript.size());
  append_record({{"session_id", rec.session_id}, {"policy", session->policy_id}, {"success", rec.success},
                 {"ask_if_nec", rec.ask_if_nec}, {"overall", rec.overall}, {"timestamp", rec.timestamp},
                 {"turns", turns}, {"transcript", transcript}});
  session->status = SessionStatus::closed;
  std::lock_guard g(mu_);
  closed_.push_back({session->policy_id, rec.success ? 1.0 : 0.0, turns, static_cast<double>(rec.ask_if_nec),
                     static_cast<double>(rec.overall)});
}

nlohmann::json DialogueService::summary() const {
  std::lock_guard lock(mu_);
  if (closed_.empty()) throw ServiceError(404, "no completed questionnaires yet");
  std::map<std::string, std::vector<const Closed*>> by_policy;
  for (const auto& c : closed_) by_policy[c.policy_id].push_back(&c);
  auto stats = [](const std::vector<const Closed*>& rows, double Closed::*field) {
    double mean = 0.0;
    for (const auto* r : rows) mean += r->*field;
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto* r : rows) var += (r->*field - mean) * (r->*field - mean);
    return nlohmann::json{{"mean", mean}, {"std", std::sqrt(var / static_cast<double>(rows.size()))}};
  };
  nlohmann::json out = {{"policies", nlohmann::json::array()}};
  for (const auto& [pid, rows] : by_policy) {
    out["policies"].push_back({{"policy", pid},
                               {"sessions", rows.size()},
                               {"success", stats(rows, &Closed::success)},
                               {"turns", stats(rows, &Closed::turns)},
                               {"ask_if_nec", stats(rows, &Closed::ask_if_nec)},
                               {"overall", stats(rows, &Closed::overall)}});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
auto guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    } catch (const nlohmann::json::exception& e) {
      send_json(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
    } catch (const std::exception& e) {
      spdlog::error("request {} {} failed: {}", req.method, req.path, e.what());
      send_json(res, 500, {{"error", e.what()}});
    }
  };
}

nlohmann::json body_of(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  return nlohmann::json::parse(req.body);
}

}  // namespace

void install_routes(httplib::Server& server, DialogueService& service, const ServiceOptions& opts) {
  const std::string token = opts.token;
  server.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Trial-Token");
    if (req.method == "OPTIONS") {
      res.status = 204;
      return httplib::Server::HandlerResponse::Handled;
    }
    if (!token.empty() && req.path.rfind("/api/", 0) == 0) {
      const bool ok = req.get_header_value("X-Trial-Token") == token || req.get_param_value("token") == token;
      if (!ok) {
        send_json(res, 401, {{"error", "missing or wrong trial token"}});
        return httplib::Server::HandlerResponse::Handled;
      }
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  server.Get("/healthz", guarded([&service](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, {{"status", "ok"}, {"policies", service.policy_ids()}});
             }));
  server.Get("/api/policies", guarded([&service](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, {{"policies", service.policy_ids()}});
             }));
  server.Post("/api/session", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const auto body = body_of(req);
                const auto reply = service.create_session(body.value("policy", std::string()));
                send_json(res, 200, {{"session_id", reply.session_id}, {"greeting", reply.text},
                                     {"status", to_string(reply.status)}});
              }));
  server.Post(R"(/api/session/([^/]+)/turn)", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                const auto body = body_of(req);
                if (!body.contains("text") || !body.at("text").is_string()) {
                  throw ServiceError(422, "'text' must be a string");
                }
                const auto reply = service.user_turn(req.matches[1], body.at("text").get<std::string>());
                send_json(res, 200, {{"system_text", reply.text}, {"status", to_string(reply.status)},
                                     {"debug", reply.debug}});
              }));
  server.Post(R"(/api/session/([^/]+)/questionnaire)",
              guarded([&service](const httplib::Request& req, httplib::Response& res) {
                service.submit_questionnaire(req.matches[1], body_of(req));
                send_json(res, 200, {{"status", "closed"}});
              }));
  server.Get("/api/summary", guarded([&service](const httplib::Request&, httplib::Response& res) {
               send_json(res, 200, service.summary());
             }));
  if (!opts.static_dir.empty() && !server.set_mount_point("/", opts.static_dir)) {
    spdlog::warn("static directory {} not found", opts.static_dir);
  }
}

void run_server(DialogueService& service, const ServiceOptions& opts) {
  httplib::Server server;
  install_routes(server, service, opts);
  spdlog::info("serving on http://{}:{}", opts.host, opts.port);
  if (!server.listen(opts.host, opts.port)) {
    throw std::runtime_error(fmt::format("cannot listen on {}:{}", opts.host, opts.port));
  }
}

}  // namespace feudalgain
