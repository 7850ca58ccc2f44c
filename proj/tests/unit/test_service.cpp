#include <doctest.h>

#include <fstream>
#include <thread>

#include "feudalgain/service.hpp"
#include "support.hpp"

// After Eigen: resolv.h defines a _res macro.
#include <httplib.h>

using namespace feudalgain;
using nlohmann::json;

namespace {

const RuleNlu& nlu() {
  static const RuleNlu n(fgtest::cr().ontology);
  return n;
}

std::vector<DialogueAct> parse(const std::string& text, const DialogueAct* ctx = nullptr) {
  return nlu().parse(text, ctx);
}

std::unique_ptr<DialogueService> make_service(const std::filesystem::path& log) {
  auto domain = std::make_shared<const Domain>(fgtest::cr());
  auto svc = std::make_unique<DialogueService>(domain, TemplateSet::load(fgtest::data_dir() / "cr" / "templates.txt"), log);
  svc->add_policy("oracle", std::make_shared<ScriptedOraclePolicy>());
  return svc;
}

/// Serves `svc` on a free local port for the lifetime of the object.
class LocalServer {
 public:
  LocalServer(DialogueService& svc, ServiceOptions opts) {
    install_routes(server_, svc, opts);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
  auto r = c.Post(path, body.dump(), "application/json");
  REQUIRE(r);
  CHECK(r->status == expect);
  return r->body.empty() ? json{} : json::parse(r->body);
}

}  // namespace

TEST_CASE("text normalisation") {
  CHECK(normalise_text("Don't, CARE!") == " dont care ");
  CHECK(normalise_text("") == " ");
}

TEST_CASE("rule NLU: values, synonyms and near misses") {
  const auto acts = parse("I want a cheap restaurant in the north");
  REQUIRE(acts.size() == 2);
  CHECK(acts[0] == DialogueAct::inform("pricerange", "cheap"));
  CHECK(acts[0].confidence == RuleNlu::kExact);
  CHECK(acts[1] == DialogueAct::inform("area", "north"));

  const auto syn = parse("somewhere inexpensive please");
  REQUIRE(syn.size() == 1);
  CHECK(syn[0].items == DialogueAct::inform("pricerange", "cheap").items);
  CHECK(syn[0].confidence == RuleNlu::kFuzzy);

  const auto typo = parse("chinnese food");
  REQUIRE(typo.size() == 1);
  CHECK(typo[0].items == DialogueAct::inform("food", "chinese").items);
  CHECK(typo[0].confidence == RuleNlu::kFuzzy);
}

TEST_CASE("rule NLU: dialogue acts in context") {
  const auto confirm = DialogueAct::confirm("food", "italian");
  CHECK(parse("yes please", &confirm).front().type == ActType::affirm);
  const auto neg = parse("no, I want french", &confirm);
  REQUIRE(neg.size() == 2);
  CHECK(neg[0].type == ActType::negate);
  CHECK(neg[1] == DialogueAct::inform("food", "french"));

  const auto ask_area = DialogueAct::request("area");
  const auto dc = parse("I don't care", &ask_area);
  REQUIRE(dc.size() == 1);
  CHECK(dc[0] == DialogueAct::inform("area", std::string(kDontCare)));
  // A named slot takes the dontcare instead of the asked one.
  const auto named = parse("any type of food is fine", &ask_area);
  REQUIRE_FALSE(named.empty());
  CHECK(named[0] == DialogueAct::inform("food", std::string(kDontCare)));

  const auto req = parse("what is the phone number");
  REQUIRE(req.size() == 1);
  CHECK(req[0] == DialogueAct::request("phone"));
  CHECK(parse("thanks, bye").back().type == ActType::bye);
  CHECK(parse("hello").front().type == ActType::hello);
  CHECK(parse("qwerty zzz").front().type == ActType::null);
}

TEST_CASE("template rendering") {
  const auto t = TemplateSet::parse(
      "# comment\nrequest = What {slot}?\nrequest:area = Which area?\nselect = {value1} or {value2}?\n"
      "inform = {name}: {details}.\ninform:none = Nothing.\nitem = {slot} {value}\nitem:area = in the {value}\n");
  CHECK(t.render(DialogueAct::request("food")) == "What food?");
  CHECK(t.render(DialogueAct::request("area")) == "Which area?");
  CHECK(t.render(DialogueAct{ActType::select, {{"food", "thai"}, {"food", "french"}}}) == "thai or french?");
  CHECK(t.render(DialogueAct{ActType::inform, {{"name", "Bistro"}, {"area", "north"}, {"food", "thai"}}}) ==
        "Bistro: in the north and food thai.");
  CHECK(t.render(DialogueAct{ActType::inform, {{"name", "none"}}}) == "Nothing.");
  CHECK(t.has("request:area"));
  CHECK_FALSE(t.has("hello"));
}

TEST_CASE("questionnaire validation") {
  CHECK(QuestionnaireRecord::from_json({{"success", "yes"}, {"ask_if_nec", 4}, {"overall", 5}}).success);
  CHECK_FALSE(QuestionnaireRecord::from_json({{"success", false}, {"ask_if_nec", 1}, {"overall", 1}}).success);
  for (const json& bad : {json{{"success", true}, {"ask_if_nec", 0}, {"overall", 3}},
                          json{{"success", true}, {"ask_if_nec", 3}, {"overall", 6}},
                          json{{"success", "maybe"}, {"ask_if_nec", 3}, {"overall", 3}},
                          json{{"ask_if_nec", 3}, {"overall", 3}}, json{{"success", true}, {"ask_if_nec", 2.5}, {"overall", 3}}}) {
    try {
      QuestionnaireRecord::from_json(bad);
      FAIL("accepted " << bad.dump());
    } catch (const ServiceError& e) {
      CHECK(e.status() == 422);
    }
  }
}

TEST_CASE("in-process session lifecycle") {
  const auto log = fgtest::scratch("service_direct") / "records.jsonl";
  const auto holder = make_service(log);
  auto& svc = *holder;
  CHECK_THROWS_AS(svc.create_session("nope"), ServiceError);
  const auto s = svc.create_session("");
  CHECK(s.status == SessionStatus::active);
  CHECK_FALSE(s.text.empty());
  const auto r = svc.user_turn(s.session_id, "cheap italian food in the centre");
  CHECK(r.status == SessionStatus::active);
  CHECK(r.debug.at("turn") == 1);
  try {
    svc.submit_questionnaire(s.session_id, {{"success", true}, {"ask_if_nec", 3}, {"overall", 3}});
    FAIL("questionnaire accepted mid-dialogue");
  } catch (const ServiceError& e) {
    CHECK(e.status() == 409);
  }
  const auto end = svc.user_turn(s.session_id, "goodbye");
  CHECK(end.status == SessionStatus::awaiting_questionnaire);
  CHECK_THROWS_AS(svc.user_turn(s.session_id, "hello again"), ServiceError);
  svc.submit_questionnaire(s.session_id, {{"success", true}, {"ask_if_nec", 4}, {"overall", 5}});
  CHECK(svc.status(s.session_id) == SessionStatus::closed);
}

TEST_CASE("HTTP API") {
  const auto log = fgtest::scratch("service_http") / "records.jsonl";
  ServiceOptions opts;
  opts.token = "secret";
  {
    const auto svc = make_service(log);
    LocalServer server(*svc, opts);
    auto c = server.client();

    auto health = c.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(c.Get("/api/policies")->status == 401);

    c.set_default_headers({{"X-Trial-Token", "secret"}});
    CHECK(json::parse(c.Get("/api/policies")->body).at("policies") == json::array({"oracle"}));
    CHECK(c.Get("/api/summary")->status == 404);
    post(c, "/api/session", {{"policy", "unknown"}}, 404);

    const auto created = post(c, "/api/session", {{"policy", "oracle"}}, 200);
    const std::string id = created.at("session_id");
    CHECK(created.at("status") == "active");
    const std::string turn = "/api/session/" + id + "/turn";
    post(c, turn, {{"text", 42}}, 422);
    post(c, turn, json::object(), 422);
    CHECK(c.Post(turn, "{not json", "application/json")->status == 400);
    post(c, "/api/session/missing/turn", {{"text", "hi"}}, 404);

    // The oracle asks for whatever is missing, then offers a venue.
    auto reply = post(c, turn, {{"text", "I want cheap chinese food"}}, 200);
    CHECK(reply.at("status") == "active");
    CHECK(reply.at("debug").at("parsed").size() == 2);
    reply = post(c, turn, {{"text", "in the north please"}}, 200);
    CHECK(reply.at("debug").at("system_act").at("act") == "inform");
    post(c, "/api/session/" + id + "/questionnaire", {{"success", true}, {"ask_if_nec", 5}, {"overall", 4}}, 409);
    reply = post(c, turn, {{"text", "thank you, goodbye"}}, 200);
    CHECK(reply.at("status") == "awaiting_questionnaire");
    post(c, turn, {{"text", "hello?"}}, 409);

    const std::string q = "/api/session/" + id + "/questionnaire";
    post(c, q, {{"success", true}, {"ask_if_nec", 9}, {"overall", 4}}, 422);
    post(c, q, {{"success", true}, {"ask_if_nec", 5}, {"overall", 4}}, 200);
    post(c, q, {{"success", true}, {"ask_if_nec", 5}, {"overall", 4}}, 409);

    const auto summary = json::parse(c.Get("/api/summary")->body);
    REQUIRE(summary.at("policies").size() == 1);
    const auto& row = summary["policies"][0];
    CHECK(row.at("policy") == "oracle");
    CHECK(row.at("sessions") == 1);
    CHECK(row.at("success").at("mean") == 1.0);
    CHECK(row.at("ask_if_nec").at("mean") == 5.0);
    CHECK(row.at("overall").at("std") == 0.0);
    CHECK(row.at("turns").at("mean") == 3.0);

    auto preflight = c.Options("/api/session");
    REQUIRE(preflight);
    CHECK(preflight->status == 204);
    CHECK(preflight->get_header_value("Access-Control-Allow-Origin") == "*");
  }

  // Records survive a restart.
  std::ifstream in(log);
  std::string line;
  REQUIRE(std::getline(in, line));
  const auto rec = json::parse(line);
  CHECK(rec.at("policy") == "oracle");
  CHECK(rec.at("transcript").size() == 3);
  auto restarted = make_service(log);
  CHECK(restarted->summary().at("policies")[0].at("sessions") == 1);
}
