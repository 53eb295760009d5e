#include "kgdx/llm_gateway.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <thread>

using namespace kgdx;
using namespace kgdx::test;

namespace {

std::shared_ptr<const PromptLibrary> prompts() {
    return std::make_shared<const PromptLibrary>(PromptLibrary::load_default());
}

// Fails with a retryable gateway error `failures` times, then answers.
class FlakyProvider final : public LlmProvider {
public:
    FlakyProvider(int failures, std::string answer, bool retryable = true)
        : failures_(failures), answer_(std::move(answer)), retryable_(retryable) {}

    std::string complete(TemplateId, const std::vector<ChatMessage>& messages) override {
        prompts.push_back(messages.back().content);
        if (calls++ < failures_) throw Error(ErrorCode::gateway, "upstream unavailable", retryable_);
        return answer_;
    }

    int calls = 0;
    std::vector<std::string> prompts;

private:
    int failures_;
    std::string answer_;
    bool retryable_;
};

} // namespace

TEST_CASE("every template has a bundled prompt asset with its placeholders") {
    const auto lib = PromptLibrary::load_default();
    const std::map<TemplateId, std::vector<std::string>> expected = {
        {TemplateId::greeting, {}},
        {TemplateId::update_by_dialogue, {"stage", "dialogue", "template", "max_questions"}},
        {TemplateId::generate_preliminary_ddx, {"history"}},
        {TemplateId::targeted_update, {"dialogue", "main_template", "other_template", "ddx", "max_questions"}},
        {TemplateId::recognize, {"history"}},
        {TemplateId::rank, {"history", "candidates", "context"}},
        {TemplateId::draft_disease, {"disease_name", "neighbors"}},
        {TemplateId::extract_triples, {"disease_name", "draft_text", "relations"}},
        {TemplateId::rank_evidence, {"disease", "history", "symptom_edges", "drug_edges"}},
        {TemplateId::reason, {"disease_name", "history", "evidence"}},
        {TemplateId::patient_rewrite, {"conclusion", "plan", "follow_up", "precautions"}},
        {TemplateId::refine_question, {"question", "max_questions"}},
    };
    for (auto id : kAllTemplates) {
        const auto& t = lib.get(id);
        auto got = t.placeholders();
        auto want = expected.at(id);
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK_MESSAGE(got == want, to_string(id));
        CHECK(t.body.find("#!") == std::string::npos);
        CHECK(template_id_from_string(to_string(id)) == id);
    }
}

TEST_CASE("render fills placeholders and rejects missing values") {
    const PromptTemplate t{TemplateId::recognize, "History: {{ history }} / {{history}}", ResponseSchema::lines};
    CHECK(render(t, {{"history", "x"}}) == "History: x / x");
    CHECK_THROWS_AS(render(t, {}), Error);
    const PromptTemplate broken{TemplateId::recognize, "oops {{history", ResponseSchema::lines};
    CHECK_THROWS_AS(render(broken, {{"history", "x"}}), Error);
}

TEST_CASE("response schemas parse and reject malformed output") {
    SUBCASE("lines") {
        CHECK(parse_response(ResponseSchema::lines, "- fever\n2. cough\n\n") == Json{"fever", "cough"});
        CHECK_THROWS_AS(parse_response(ResponseSchema::lines, "  \n"), ParseError);
    }
    SUBCASE("scores clamp but keep the raw value") {
        const auto s = parse_response(ResponseSchema::scores, "migraine: 7\ntension type headache: 12/10\n");
        REQUIRE(s.size() == 2);
        CHECK(s[1]["name"] == "tension type headache");
        CHECK(s[1]["score"] == 10.0);
        CHECK(s[1]["raw_score"] == 12.0);
        CHECK_THROWS_AS(parse_response(ResponseSchema::scores, "migraine seven"), ParseError);
        CHECK_THROWS_AS(parse_response(ResponseSchema::scores, "migraine: high"), ParseError);
    }
    SUBCASE("headings") {
        const auto h = parse_response(ResponseSchema::headings, "## Red-Flag Symptoms\nthunderclap\n## Definition\nx\n");
        CHECK(h["red flag symptoms"] == "thunderclap");
        CHECK(h["definition"] == "x");
    }
    SUBCASE("triples") {
        CHECK(parse_response(ResponseSchema::triples, "a|b|c\n- d | e | f") ==
              Json{Json{"a", "b", "c"}, Json{"d", "e", "f"}});
        CHECK_THROWS_AS(parse_response(ResponseSchema::triples, "a|b"), ParseError);
        CHECK_THROWS_AS(parse_response(ResponseSchema::triples, "a||c"), ParseError);
    }
    SUBCASE("ranked triples") {
        const auto r = parse_response(ResponseSchema::ranked_triples, "## symptoms\na|r|b\n## drugs\n- c|treats|a\n");
        CHECK(r["symptoms"] == Json{"a|r|b"});
        CHECK(r["drugs"] == Json{"c|treats|a"});
    }
    SUBCASE("numbered") {
        const auto n = parse_response(ResponseSchema::numbered, "1. first\n2) second\nTreatment:\n1. rest\n- fluids\n");
        CHECK(n["steps"] == Json{"first", "second"});
        CHECK(n["treatment"] == Json{"rest", "fluids"});
        CHECK_THROWS_AS(parse_response(ResponseSchema::numbered, "no structure here"), ParseError);
    }
    SUBCASE("json object") {
        CHECK(parse_response(ResponseSchema::json_object, "Sure: {\"a\": 1} done")["a"] == 1);
        CHECK_THROWS_AS(parse_response(ResponseSchema::json_object, "{broken"), ParseError);
        CHECK_THROWS_AS(parse_response(ResponseSchema::json_object, "none"), ParseError);
    }
    SUBCASE("text") {
        CHECK(parse_response(ResponseSchema::text, "  hi  ") == "hi");
        CHECK_THROWS_AS(parse_response(ResponseSchema::text, " \n "), ParseError);
    }
}

TEST_CASE("scripted mock replays per template and reports exhaustion") {
    ScriptedMockProvider mock({entry(TemplateId::recognize, "a"), entry(TemplateId::rank, "x: 1"),
                               entry(TemplateId::recognize, "b")});
    CHECK(mock.complete(TemplateId::rank, {{"user", "p0"}}) == "x: 1");
    CHECK(mock.complete(TemplateId::recognize, {{"user", "p1"}}) == "a");
    CHECK(mock.complete(TemplateId::recognize, {{"user", "p2"}}) == "b");
    CHECK(mock.calls(TemplateId::recognize) == 2);
    try {
        mock.complete(TemplateId::recognize, {{"user", "p3"}});
        FAIL("expected exhaustion");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::gateway);
        CHECK_FALSE(e.retryable());
    }
    CHECK(mock.received().size() == 4);
    CHECK(mock.received()[1].second == "p1");

    ScriptedMockProvider resumed({entry(TemplateId::recognize, "a"), entry(TemplateId::recognize, "b")});
    resumed.restore(Json{{"recognize", 1}});
    CHECK(resumed.complete(TemplateId::recognize, {{"user", ""}}) == "b");
    CHECK(resumed.state() == Json{{"recognize", 2}});
}

TEST_CASE("gateway retries transient failures and records a transcript") {
    auto flaky = std::make_shared<FlakyProvider>(2, "fever\ncough");
    auto transcript = std::make_shared<Transcript>();
    Gateway gw(prompts(), flaky, 2, 0, transcript);
    CHECK(gw.call(TemplateId::recognize, {{"history", "h"}}) == Json{"fever", "cough"});
    CHECK(flaky->calls == 3);
    const auto entries = transcript->entries();
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].contains("error"));
    CHECK(entries[2]["response"] == "fever\ncough");
}

TEST_CASE("gateway gives up after max_retries and on permanent errors") {
    auto flaky = std::make_shared<FlakyProvider>(5, "x");
    Gateway gw(prompts(), flaky, 2, 0);
    CHECK_THROWS_AS(gw.call(TemplateId::recognize, {{"history", "h"}}), Error);
    CHECK(flaky->calls == 3);

    auto permanent = std::make_shared<FlakyProvider>(1, "x", false);
    Gateway gw2(prompts(), permanent, 2, 0);
    CHECK_THROWS_AS(gw2.call(TemplateId::recognize, {{"history", "h"}}), Error);
    CHECK(permanent->calls == 1);
}

TEST_CASE("a schema violation is retried once with a format reminder") {
    auto mock = std::make_shared<ScriptedMockProvider>(
        std::vector<ScriptEntry>{entry(TemplateId::rank, "no scores here"), entry(TemplateId::rank, "migraine: 4")});
    Gateway gw(prompts(), mock, 0, 0);
    const auto r = gw.call(TemplateId::rank, {{"history", "h"}, {"candidates", "c"}, {"context", "x"}});
    CHECK(r[0]["name"] == "migraine");
    const auto rec = mock->received();
    REQUIRE(rec.size() == 2);
    CHECK(rec[1].second.find("FORMAT REMINDER") != std::string::npos);

    auto bad = std::make_shared<ScriptedMockProvider>(
        std::vector<ScriptEntry>{entry(TemplateId::rank, "nope"), entry(TemplateId::rank, "still nope")});
    Gateway gw2(prompts(), bad, 0, 0);
    try {
        gw2.call(TemplateId::rank, {{"history", "h"}, {"candidates", "c"}, {"context", "x"}});
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.raw_payload() == "still nope");
    }
}

TEST_CASE("transcripts append JSON lines to disk") {
    TempDir tmp;
    const auto file = tmp / "t.jsonl";
    Transcript t(file);
    t.record(TemplateId::greeting, 0, "prompt", "hello");
    t.record(TemplateId::greeting, 1, "prompt", "", "boom");
    std::ifstream in(file);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = Json::parse(line);
        CHECK(j["template_id"] == "greeting");
        CHECK(j["seq"] == ++n);
    }
    CHECK(n == 2);
}

TEST_CASE("provider config reads files and environment overrides") {
    auto c = provider_config_from_json(Json{{"kind", "http_chat"}, {"endpoint", "http://x/y"}, {"max_retries", 4}});
    CHECK(c.kind == ProviderKind::http_chat);
    CHECK(c.max_retries == 4);
    CHECK_THROWS_AS(provider_config_from_json(Json{{"kind", "carrier-pigeon"}}), Error);
    CHECK_THROWS_AS(HttpChatProvider(ProviderConfig{}), Error);

    setenv("KGDX_LLM_ENDPOINT", "http://override:1/chat", 1);
    setenv("KGDX_LLM_CREDENTIAL", "secret", 1);
    apply_env_overrides(c);
    unsetenv("KGDX_LLM_ENDPOINT");
    unsetenv("KGDX_LLM_CREDENTIAL");
    CHECK(c.endpoint == "http://override:1/chat");
    CHECK(c.credential == "secret");
}

TEST_CASE("http providers speak to a local endpoint") {
    httplib::Server server;
    std::string seen_auth;
    int chat_calls = 0;
    server.Post("/chat", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        if (chat_calls++ == 0) {
            res.status = 503;
            return;
        }
        const auto body = Json::parse(req.body);
        res.set_content(Json{{"content", "echo: " + body["messages"][0]["content"].get<std::string>()}}.dump(),
                        "application/json");
    });
    server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        const auto texts = Json::parse(req.body)["texts"];
        Json vectors = Json::array();
        for (std::size_t i = 0; i < texts.size(); ++i) vectors.push_back({1.0, static_cast<double>(i)});
        res.set_content(Json{{"vectors", vectors}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const auto base = "http://127.0.0.1:" + std::to_string(port);
    ProviderConfig cfg;
    cfg.kind = ProviderKind::http_chat;
    cfg.endpoint = base + "/chat";
    cfg.credential = "k";
    auto chat = std::make_shared<HttpChatProvider>(cfg);
    Gateway gw(prompts(), chat, 2, 0);
    const auto reply = gw.call(TemplateId::patient_rewrite,
                               {{"conclusion", "c"}, {"plan", "p"}, {"follow_up", "f"}, {"precautions", "x"}});
    CHECK(reply.get<std::string>().rfind("echo: ", 0) == 0);
    CHECK(chat_calls == 2);
    CHECK(seen_auth == "Bearer k");

    HttpEmbeddingProvider embed(base + "/embed", 2);
    const auto vs = embed.embed_batch({"a", "b", "a"});
    CHECK(vs[0] == vs[2]);
    CHECK(vs[1] == Vector{1.0, 1.0});
    HttpEmbeddingProvider wrong_dim(base + "/embed", 3);
    CHECK_THROWS_AS(wrong_dim.embed("z"), Error);

    server.stop();
    th.join();
}
