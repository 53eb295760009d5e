#include "kgdx/diagnosis.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>

using namespace kgdx;
using namespace kgdx::test;

namespace {

std::shared_ptr<const PromptLibrary> prompts() {
    return std::make_shared<const PromptLibrary>(PromptLibrary::load_default());
}

HistoryExport eye_history(std::vector<DdxEntry> ddx = {}) {
    HistoryExport h{{make_main_template(), make_other_template()}, std::move(ddx)};
    h.history.main_template.find("Chief Complaint", "complaint")->value = "headache";
    h.history.main_template.find("Clinical Findings", "associated_symptoms")->value = "dry eyes";
    return h;
}

} // namespace

TEST_CASE("kg_score sums inverse distances and ignores unreachable symptoms") {
    auto g = tiny_graph();
    std::map<std::string, std::optional<std::size_t>> dist;
    CHECK(kg_score(g, "d-a", {"s-a", "s-shared", "s-b", "s-a"}, &dist) == doctest::Approx(1.0 + 1.0 + 1.0 / 3.0));
    CHECK(dist.at("s-b") == 3u);
    g.add_entity(make_entity("s-iso", "isolated", EntityKind::symptom));
    CHECK(kg_score(g, "d-a", {"s-iso"}, &dist) == 0.0);
    CHECK_FALSE(dist.at("s-iso"));
}

TEST_CASE("kg candidates match the brute-force oracle on random graphs") {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 60; ++i) {
        const auto c = random_case(rng);
        const DistanceOracle oracle(c.graph);
        const auto got = kg_candidates(c.graph, c.linked, 1000);

        std::vector<std::pair<double, std::string>> expected;
        for (const auto& d : c.diseases) {
            const bool adjacent = std::any_of(c.linked.begin(), c.linked.end(), [&](const std::string& s) {
                return oracle.distance(d, s) == 1u;
            });
            if (adjacent) expected.emplace_back(oracle_kg_score(oracle, d, c.linked), d);
        }
        std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        REQUIRE(got.size() == expected.size());
        for (std::size_t j = 0; j < got.size(); ++j) {
            CHECK(got[j].disease_id == expected[j].second);
            CHECK(std::abs(got[j].kg_score - expected[j].first) <= 1e-9);
        }
        const auto top = kg_candidates(c.graph, c.linked, 3);
        CHECK(top.size() == std::min<std::size_t>(3, expected.size()));
    }
}

TEST_CASE("combining adds linked LLM names and reports unlinked ones") {
    const auto g = fixture_graph();
    auto provider = std::make_shared<MockEmbeddingProvider>();
    const auto diseases = build_index(g, provider, EntityKind::disease);
    const std::vector<std::string> linked{"s-headache", "s-eyepain", "s-blurred", "s-dryeyes"};
    const auto kg = kg_candidates(g, linked);
    REQUIRE(kg.size() == 3);
    CHECK(kg[0].disease_id == "d-eyestrain");
    CHECK(kg[1].disease_id == "d-glaucoma");

    const auto r = combine_candidates(
        g, kg, {{"eye strain", 7, ""}, {"Migraine", 5, ""}, {"medication overuse headache", 4, ""}}, diseases, linked,
        {});
    CHECK(r.unlinked_names == std::vector<std::string>{"medication overuse headache"});
    REQUIRE(r.candidates.size() == 4);
    CHECK(r.candidates[0].source == CandidateSource::both);
    CHECK(r.candidates[1].source == CandidateSource::kg);
    CHECK(r.candidates[3].disease_id == "d-migraine");
    CHECK(r.candidates[3].source == CandidateSource::llm);
    CHECK(r.candidates[3].kg_score > 0.0);
}

TEST_CASE("evidence context splits neighbors at the similarity threshold") {
    const auto g = fixture_graph();
    auto provider = std::make_shared<MockEmbeddingProvider>();
    const auto symptoms = build_index(g, provider, EntityKind::symptom);
    const std::vector<std::string> linked{"s-headache", "s-dryeyes"};
    const auto kg = kg_candidates(g, linked);
    DiagnosisConfig cfg;
    const auto ctx = build_evidence_context(g, kg, linked, symptoms, cfg);
    REQUIRE(ctx.candidates.size() == kg.size());
    const auto& eye = ctx.candidates[0];
    CHECK(eye.disease_id == "d-eyestrain");
    CHECK(eye.definition.find("near work") != std::string::npos);
    CHECK(eye.symptoms.size() == 2);
    CHECK(eye.background.size() == 2);
    for (const auto& s : eye.symptoms) CHECK(s.similarity >= 0.8);
    for (const auto& s : eye.background) CHECK(s.similarity < 0.8);
    CHECK(eye.paths.at("s-dryeyes")->size() == 2);
    CHECK_FALSE(eye.triples.empty());
    CHECK(evidence_context_from_json(to_json(ctx)).candidates.size() == ctx.candidates.size());
    CHECK(render_context_text(g, ctx).find("### eye strain") != std::string::npos);
}

TEST_CASE("ranking selects min(k, n) and keeps relative likelihood in range") {
    const auto g = fixture_graph();
    const auto kg = kg_candidates(g, {"s-fever", "s-cough"}, 10);
    REQUIRE(kg.size() == 4);
    auto mock = std::make_shared<ScriptedMockProvider>(std::vector<ScriptEntry>{
        entry(TemplateId::rank, "influenza: 9\ncovid 19: 14\nd-cold: -2\nplague: 5\ninfluenza: 1"),
        entry(TemplateId::rank, "influenza: 9")});
    Gateway gw(prompts(), mock, 0, 0);
    const auto r = rank_and_select("history", g, {}, kg, gw, 3);
    CHECK(r.ranked.size() == 4);
    REQUIRE(r.selected.size() == 3);
    CHECK(r.selected[0].disease_id == "d-covid");
    CHECK(r.selected[0].relative_likelihood == 100.0);
    CHECK(r.selected[1].disease_id == "d-influenza");
    for (const auto& c : r.ranked) {
        REQUIRE(c.relative_likelihood);
        CHECK(*c.relative_likelihood >= 0.0);
        CHECK(*c.relative_likelihood <= 100.0);
    }
    // clamp (2), unknown, repeat, unscored meningitis
    CHECK(r.warnings.size() == 5);

    const auto one = rank_and_select("history", g, {}, {kg[0]}, gw, 3);
    CHECK(one.selected.size() == 1);
    CHECK_THROWS_AS(rank_and_select("history", g, {}, {}, gw, 3), Error);
}

TEST_CASE("the pipeline runs end to end on the fixture graph") {
    auto store = std::make_shared<GraphStore>(fixture_graph());
    Worklist worklist;
    auto mock = std::make_shared<ScriptedMockProvider>(std::vector<ScriptEntry>{
        entry(TemplateId::recognize, "headache\neye pain\ndry eyes\nblurred vision\nheadache\nzebra stripes"),
        entry(TemplateId::rank, "eye strain: 9\nmigraine: 4\nacute angle closure glaucoma: 3\ninfluenza: 1")});
    Gateway gw(prompts(), mock, 0, 0);
    ManualClock clock(parse_rfc3339("2026-03-02T09:00:00Z"));
    PipelineDeps deps{*store, std::make_shared<MockEmbeddingProvider>(), gw, &worklist, {}, clock};

    const auto before = store->snapshot();
    const auto record =
        run_diagnosis(eye_history({{"eye strain", 7, ""}, {"migraine", 5, ""}, {"brain fog syndrome", 3, ""}}), deps,
                      DiagnosisConfig{});
    CHECK(record.symptoms.mentions.size() == 5);
    CHECK(record.symptoms.linked.size() == 4);
    CHECK(record.unlinked_names == std::vector<std::string>{"brain fog syndrome"});
    REQUIRE(record.candidates.size() == 3);
    CHECK(record.candidates[0].name == "eye strain");
    CHECK(record.combined.size() == 4);
    REQUIRE(record.evolution_events.size() == 1);
    CHECK(worklist.get(record.evolution_events[0]).trigger == TriggerKind::absent);

    const auto after = store->snapshot();
    for (const auto& cc : record.evidence_context.candidates) {
        for (const auto& k : cc.triples) {
            CHECK(after->find_triple(k)->usage_count == before->find_triple(k)->usage_count + 1);
        }
    }

    const auto json = to_json(record).dump();
    CHECK(to_json(diagnosis_record_from_json(Json::parse(json))).dump() == json);
}

TEST_CASE("reranking reuses the combined candidates") {
    auto store = std::make_shared<GraphStore>(fixture_graph());
    auto mock = std::make_shared<ScriptedMockProvider>(std::vector<ScriptEntry>{
        entry(TemplateId::recognize, "headache\ndry eyes"),
        entry(TemplateId::rank, "eye strain: 9\nmigraine: 4"),
        entry(TemplateId::recognize, "headache\nnausea\nphotophobia"),
        entry(TemplateId::rank, "migraine: 8\neye strain: 3")});
    Gateway gw(prompts(), mock, 0, 0);
    ManualClock clock(parse_rfc3339("2026-03-02T09:00:00Z"));
    PipelineDeps deps{*store, std::make_shared<MockEmbeddingProvider>(), gw, nullptr, {}, clock};
    const auto first = run_diagnosis(eye_history({{"migraine", 5, ""}}), deps, {});
    const auto second = rerank_diagnosis("headache with nausea", first, deps, {});
    CHECK(second.combined.size() == first.combined.size());
    CHECK(second.candidates[0].disease_id == "d-migraine");
    CHECK(second.symptoms.linked.size() == 3);
}

TEST_CASE("an empty history cannot be diagnosed") {
    auto mock = std::make_shared<ScriptedMockProvider>(std::vector<ScriptEntry>{});
    Gateway gw(prompts(), mock, 0, 0);
    CHECK_THROWS_AS(recognize_symptoms("   ", gw), Error);
}
