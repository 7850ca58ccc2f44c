#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "feudalgain/dialogue.hpp"
#include "feudalgain/harness.hpp"

namespace httplib {
class Server;
}

namespace feudalgain {

/// Keyword/value matcher. Exact value mentions get confidence 1.0; synonyms
/// and near-miss spellings get 0.7.
class RuleNlu {
 public:
  explicit RuleNlu(const Ontology& ontology);

  static constexpr double kExact = 1.0;
  static constexpr double kFuzzy = 0.7;

  /// `context` is the system act being answered (may be null).
  std::vector<DialogueAct> parse(const std::string& text, const DialogueAct* context) const;

 private:
  struct Pattern {
    std::string phrase;  // normalised, space padded
    std::size_t slot;
    std::string value;
    double confidence;
  };
  const Ontology* ontology_;
  std::vector<Pattern> values_;
  std::vector<std::pair<std::string, std::size_t>> slot_aliases_;     // phrase -> informable
  std::vector<std::pair<std::string, std::string>> request_aliases_;  // phrase -> requestable
};

/// Lowercases, maps punctuation to spaces and pads with single spaces.
std::string normalise_text(const std::string& text);

/// Template NLG: one line per `act[:slot] = text`, with {slot}, {value},
/// {value1}, {value2}, {name} and {details} placeholders.
class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& path);
  static TemplateSet parse(const std::string& text);

  std::string render(const DialogueAct& act) const;
  bool has(const std::string& key) const { return templates_.contains(key); }

 private:
  const std::string* find(const std::string& act, const std::string& slot) const;
  std::map<std::string, std::string> templates_;
};

enum class SessionStatus { active, awaiting_questionnaire, closed };
std::string_view to_string(SessionStatus s);

/// Error carrying an HTTP status code.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct TranscriptTurn {
  std::string user_text;
  std::vector<DialogueAct> user_acts;
  DialogueAct system_act;
  std::string system_text;
};

struct QuestionnaireRecord {
  std::string session_id;
  bool success = false;
  int ask_if_nec = 0;
  int overall = 0;
  std::string timestamp;

  /// Throws ServiceError(422) on out-of-range scores or a malformed body.
  static QuestionnaireRecord from_json(const nlohmann::json& j);
};

struct SessionReply {
  std::string session_id;
  std::string text;
  SessionStatus status = SessionStatus::active;
  nlohmann::json debug;
};

class DialogueService {
 public:
  DialogueService(std::shared_ptr<const Domain> domain, TemplateSet templates, std::filesystem::path record_log);

  void add_policy(const std::string& id, std::shared_ptr<const DialoguePolicy> policy);
  std::vector<std::string> policy_ids() const;

  SessionReply create_session(const std::string& policy_id);
  SessionReply user_turn(const std::string& session_id, const std::string& text);
  void submit_questionnaire(const std::string& session_id, const nlohmann::json& body);
  nlohmann::json summary() const;
  SessionStatus status(const std::string& session_id) const;

 private:
  struct Session {
    std::string id;
    std::string policy_id;
    std::shared_ptr<const DialoguePolicy> policy;
    BeliefState belief;
    DialogueAct last_system_act;
    std::vector<TranscriptTurn> transcript;
    SessionStatus status = SessionStatus::active;
    std::mutex mu;
  };
  struct Closed {
    std::string policy_id;
    double success, turns, ask_if_nec, overall;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  void append_record(const nlohmann::json& line);
  void load_records();

  std::shared_ptr<const Domain> domain_;
  TemplateSet templates_;
  RuleNlu nlu_;
  std::filesystem::path log_path_;

  mutable std::mutex mu_;  // sessions, policies, closed
  std::map<std::string, std::shared_ptr<const DialoguePolicy>> policies_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::vector<Closed> closed_;
  std::uint64_t next_id_ = 1;
  std::mutex log_mu_;
};

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path record_log = "trial_records.jsonl";
  std::string token;  // empty: no token check
  std::string static_dir;
};

/// Registers the HTTP routes on `server`.
void install_routes(httplib::Server& server, DialogueService& service, const ServiceOptions& opts);
/// Blocks serving HTTP until the process is stopped.
void run_server(DialogueService& service, const ServiceOptions& opts);

}  // namespace feudalgain
