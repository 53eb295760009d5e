#include "kgdx/history.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace kgdx;
using namespace kgdx::test;

namespace {

std::string update(const Json& tmpl, const std::string& question) {
    return Json{{"template", tmpl}, {"question", question}}.dump();
}

std::string targeted(const std::vector<std::string>& names, const std::string& question) {
    Json ddx = Json::array();
    double l = 9;
    for (const auto& n : names) ddx.push_back({{"disease_name", n}, {"likelihood", l--}, {"rationale", "r"}});
    return Json{{"main_template", Json::object()}, {"other_template", Json::object()}, {"ddx", ddx},
                {"question", question}}
        .dump();
}

const Json kMainAll = {{"Patient Information", {{"age", "40"}, {"sex", "male"}}},
                       {"Chief Complaint",
                        {{"complaint", "cough"}, {"onset", "sudden"}, {"duration", "2 days"}, {"severity", "5/10"}}},
                       {"Clinical Findings", {{"associated_symptoms", "fever"}}}};
const Json kOtherAll = {{"Past History", {{"past_diseases", "none"}, {"medications", "none"}, {"allergies", "none"}}},
                        {"Personal & Family History", {{"family_history", "none"}}}};

std::string ddx_reply(const std::vector<std::string>& names) {
    Json ddx = Json::array();
    double l = 8;
    for (const auto& n : names) ddx.push_back({{"disease_name", n}, {"likelihood", l--}, {"rationale", "r"}});
    return Json{{"ddx", ddx}}.dump();
}

struct Driver {
    std::shared_ptr<ScriptedMockProvider> mock;
    Gateway gateway;
    ManualClock clock{parse_rfc3339("2026-03-02T09:00:00Z"), std::chrono::seconds{1}};

    explicit Driver(std::vector<ScriptEntry> script)
        : mock(std::make_shared<ScriptedMockProvider>(std::move(script))),
          gateway(std::make_shared<const PromptLibrary>(PromptLibrary::load_default()), mock, 0, 0) {}
};

} // namespace

TEST_CASE("templates carry the mandated sections and required slots") {
    const auto main = make_main_template();
    const auto other = make_other_template();
    CHECK(main.sections.size() == 3);
    CHECK(other.sections.size() == 3);
    CHECK(main.required_count() == 7);
    CHECK(other.required_count() == 4);
    CHECK(is_schema_slot("Chief Complaint", "onset"));
    CHECK(is_schema_slot("Patient Perspective", "expectations"));
    CHECK_FALSE(is_schema_slot("Chief Complaint", "diagnosis"));
    CHECK_FALSE(main.completed());

    auto t = make_main_template();
    const auto j = t.to_json();
    CHECK(j["Chief Complaint"]["onset"].is_null());
    t.find("Chief Complaint", "onset")->value = "today";
    CHECK(HistoryTemplate::from_json(t.to_json(), make_main_template()) == t);
}

TEST_CASE("ddx normalization sorts, deduplicates and truncates") {
    const auto n = normalize_ddx({{"B", 5, ""}, {"a", 5, ""}, {"c", 9, ""}, {"A", 1, ""}});
    REQUIRE(n.size() == 3);
    CHECK(n[0].disease_name == "c");
    CHECK(n[1].disease_name == "a");
    CHECK(n[2].disease_name == "B");
    CHECK(top_ddx(n, 2).size() == 2);
    CHECK(ddx_from_json(ddx_to_json(n)) == n);
}

TEST_CASE("limit_questions keeps at most n questions") {
    CHECK(limit_questions("Age? Sex? Job?", 2) == "Age? Sex?");
    CHECK(limit_questions("Tell me more.", 1) == "Tell me more.");
}

TEST_CASE("the dialogue walks Main, Other, Ddx and stops on convergence") {
    Driver d({entry(TemplateId::greeting, "Hello"),
              entry(TemplateId::update_by_dialogue, update(kMainAll, "Past illnesses? Medicines? Allergies?")),
              entry(TemplateId::update_by_dialogue, update(kOtherAll, "Anyone sick around you?")),
              entry(TemplateId::generate_preliminary_ddx, ddx_reply({"influenza", "common cold", "covid 19"})),
              entry(TemplateId::targeted_update, targeted({"influenza", "covid 19", "common cold"}, "Thanks."))});
    auto s = start_session({}, d.gateway, d.clock);
    CHECK(s.stage == DialogueStage::Main);
    CHECK(s.messages.size() == 1);

    auto r = step(s, "I have a cough", d.gateway, d.clock);
    CHECK(r.state.stage == DialogueStage::Other);
    CHECK(r.prompt == "Past illnesses? Medicines?");
    CHECK(r.deltas.size() == 7);
    CHECK(s.stage == DialogueStage::Main);  // input untouched

    r = step(r.state, "Nothing", d.gateway, d.clock);
    CHECK(r.state.stage == DialogueStage::Ddx);
    CHECK(r.prompt == "Anyone sick around you?");
    CHECK(r.state.ddx.size() == 3);
    CHECK_FALSE(r.state.previous_top3);
    CHECK_THROWS_AS(finish(r.state), Error);

    r = step(r.state, "My daughter", d.gateway, d.clock);
    CHECK(r.state.stage == DialogueStage::Done);
    CHECK(stop_reason(r.state) == StopReason::converged);
    CHECK(r.prompt == kCompletionNotice);
    CHECK(r.state.ddx_questions_asked == 1);
    CHECK_THROWS_AS(step(r.state, "more", d.gateway, d.clock), Error);

    const auto h = finish(r.state);
    CHECK(h.preliminary_ddx.size() == 3);
    CHECK(h.preliminary_ddx[0].disease_name == "influenza");
    CHECK(h.history.main_template.completed());
    CHECK(r.state.messages.size() == 7);
}

TEST_CASE("the question cap ends an unsettled differential") {
    std::vector<ScriptEntry> script{entry(TemplateId::greeting, "Hello"),
                                    entry(TemplateId::update_by_dialogue, update(kMainAll, "Q?")),
                                    entry(TemplateId::update_by_dialogue, update(kOtherAll, "Q?")),
                                    entry(TemplateId::generate_preliminary_ddx, ddx_reply({"a", "b", "c"}))};
    const std::vector<std::vector<std::string>> sets = {{"a", "b", "d"}, {"a", "b", "c"}};
    for (int i = 0; i < 3; ++i) script.push_back(entry(TemplateId::targeted_update, targeted(sets[i % 2], "Q?")));
    Driver d(script);
    HistoryConfig cfg;
    cfg.max_ddx_questions = 3;
    auto s = start_session(cfg, d.gateway, d.clock);
    for (int i = 0; i < 2; ++i) s = step(s, "x", d.gateway, d.clock).state;
    for (int i = 0; i < 3; ++i) {
        CHECK(s.stage == DialogueStage::Ddx);
        s = step(s, "x", d.gateway, d.clock).state;
    }
    CHECK(s.stage == DialogueStage::Done);
    CHECK(stop_reason(s) == StopReason::question_cap);
    CHECK(s.ddx_questions_asked == 3);
}

TEST_CASE("fields outside the schema are dropped and reported") {
    const Json bad = {{"Chief Complaint", {{"complaint", "cough"}, {"diagnosis", "flu"}}},
                      {"Imaging", {{"x_ray", "clear"}}},
                      {"Patient Information", {{"age", Json::array()}}}};
    Driver d({entry(TemplateId::greeting, "Hi"), entry(TemplateId::update_by_dialogue, update(bad, "More?"))});
    auto s = start_session({}, d.gateway, d.clock);
    const auto r = step(s, "cough", d.gateway, d.clock);
    CHECK(r.deltas.size() == 1);
    CHECK(r.rejected_fields.size() == 3);
    const auto j = r.state.main_template.to_json();
    CHECK_FALSE(j["Chief Complaint"].contains("diagnosis"));
    CHECK_FALSE(j.contains("Imaging"));
}

TEST_CASE("slots are never cleared by null or empty values") {
    Driver d({entry(TemplateId::greeting, "Hi"),
              entry(TemplateId::update_by_dialogue, update({{"Chief Complaint", {{"complaint", "cough"}}}}, "A?")),
              entry(TemplateId::update_by_dialogue,
                    update({{"Chief Complaint", {{"complaint", nullptr}, {"onset", ""}}}}, "B?"))});
    auto s = start_session({}, d.gateway, d.clock);
    s = step(s, "cough", d.gateway, d.clock).state;
    const auto r = step(s, "more", d.gateway, d.clock);
    CHECK(r.deltas.empty());
    CHECK(r.state.main_template.find("Chief Complaint", "complaint")->value == "cough");
}

TEST_CASE("a gateway failure leaves the caller's state intact") {
    Driver d({entry(TemplateId::greeting, "Hi"), entry(TemplateId::update_by_dialogue, "{\"template\": {}}"),
              entry(TemplateId::update_by_dialogue, "{\"template\": {}}")});
    const auto s = start_session({}, d.gateway, d.clock);
    CHECK_THROWS_AS(step(s, "cough", d.gateway, d.clock), Error);
    CHECK(s.messages.size() == 1);
}

TEST_CASE("refined questions pass through the refine prompt") {
    Driver d({entry(TemplateId::greeting, "Hi"),
              entry(TemplateId::update_by_dialogue, update(Json::object(), "What is your age and sex?")),
              entry(TemplateId::refine_question, "How old are you? What is your sex? Where do you work?")});
    HistoryConfig cfg;
    cfg.refine_questions = true;
    auto s = start_session(cfg, d.gateway, d.clock);
    const auto r = step(s, "hi", d.gateway, d.clock);
    CHECK(r.prompt == "How old are you? What is your sex?");
}

TEST_CASE("invalid history configs are rejected") {
    HistoryConfig c;
    c.max_questions_per_turn = 3;
    CHECK_THROWS_AS(validate(c), Error);
    c = {};
    c.max_ddx_questions = 0;
    CHECK_THROWS_AS(validate(c), Error);
}

TEST_CASE("dialogue state round-trips through JSON") {
    Driver d({entry(TemplateId::greeting, "Hello"),
              entry(TemplateId::update_by_dialogue, update(kMainAll, "Q?")),
              entry(TemplateId::update_by_dialogue, update(kOtherAll, "Q?")),
              entry(TemplateId::generate_preliminary_ddx, ddx_reply({"a", "b", "c"})),
              entry(TemplateId::targeted_update, targeted({"a", "b", "d"}, "Q?"))});
    auto s = start_session({}, d.gateway, d.clock);
    for (int i = 0; i < 3; ++i) s = step(s, "x", d.gateway, d.clock).state;
    REQUIRE(s.previous_top3);
    CHECK(dialogue_state_from_json(to_json(s)) == s);
    CHECK(dialogue_state_from_json(Json::parse(to_json(s).dump())) == s);
}

TEST_CASE("history text marks uncollected slots") {
    History h{make_main_template(), make_other_template()};
    h.main_template.find("Chief Complaint", "complaint")->value = "cough";
    const auto text = render_history_text(h);
    CHECK(text.find("complaint: cough") != std::string::npos);
    CHECK(text.find("onset: (not collected)") != std::string::npos);
    const auto j = history_to_json(h);
    CHECK_FALSE(j.contains("preliminary_ddx"));
}
