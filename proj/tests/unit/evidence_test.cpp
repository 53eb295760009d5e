#include "kgdx/evidence.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace kgdx;
using namespace kgdx::test;

namespace {

KnowledgeGraph evidence_graph() {
    auto g = tiny_graph();
    g.add_entity(make_entity("dr-y", "yellowcin", EntityKind::drug));
    g.add_triple(make_triple("dr-y", "second_line_treats", "d-a", 1, std::nullopt));
    return g;
}

Gateway scripted(std::vector<ScriptEntry> script) {
    return Gateway(std::make_shared<const PromptLibrary>(PromptLibrary::load_default()),
                   std::make_shared<ScriptedMockProvider>(std::move(script)), 0, 0);
}

ReportEdit edit(std::string target, std::string op, std::size_t index, std::string text = {}) {
    return {std::move(target), std::move(op), index, std::move(text), "dr-lee", parse_rfc3339("2026-03-02T10:00:00Z")};
}

} // namespace

TEST_CASE("bundles gather definition, symptoms, drugs and paths") {
    const auto g = evidence_graph();
    const auto b = assemble_bundle(g, "d-a", {"s-b", "s-a", "s-b"});
    CHECK(b.linked_symptoms == std::vector<std::string>{"s-b", "s-a"});
    CHECK(b.definition == "A made-up fever.");
    REQUIRE(b.definition_edge);
    CHECK(b.definition_edge->key().str() == "d-a|has_definition|def-a");
    REQUIRE(b.symptom_edges.size() == 2);
    CHECK(b.symptom_edges[0].rank == 1);
    CHECK(b.symptom_edges[1].rank == 2);
    CHECK(b.drug_edges.size() == 2);
    CHECK(b.paths.at("s-b") == std::vector<std::string>{"d-a", "s-shared", "d-b", "s-b"});
    CHECK(b.paths.at("s-a") == std::vector<std::string>{"d-a", "s-a"});
    CHECK(b.path_edges.size() == 4);
    CHECK(b.included().size() == 7);
    CHECK_THROWS_AS(assemble_bundle(g, "s-a", {}), Error);
    CHECK_THROWS_AS(assemble_bundle(g, "d-missing", {}), Error);
}

TEST_CASE("evidence labels follow patient symptoms, then reviewers") {
    const auto b = assemble_bundle(evidence_graph(), "d-a", {"s-a", "s-b"});
    CHECK(b.labels.size() == b.included().size());
    CHECK(b.labels.at("d-a|has_symptom|s-a") == EvidenceLabel::subjective_symptom);
    CHECK(b.labels.at("d-b|has_symptom|s-b") == EvidenceLabel::subjective_symptom);
    CHECK(b.labels.at("d-a|has_symptom|s-shared") == EvidenceLabel::objective_guideline);
    CHECK(b.labels.at("dr-x|treats|d-a") == EvidenceLabel::objective_guideline);
    CHECK(b.labels.at("dr-y|second_line_treats|d-a") == EvidenceLabel::inferred_reasoning);
}

TEST_CASE("building a bundle bumps usage once per included triple") {
    auto g = evidence_graph();
    const auto before = g;
    const auto b = build_bundle(g, "d-a", {"s-a", "s-b"});
    for (const auto& k : b.included()) {
        CHECK(g.find_triple(k)->usage_count == before.find_triple(k)->usage_count + 1);
    }
    const auto untouched = TripleKey{"d-b", "has_symptom", "s-b"};
    const auto b2 = build_bundle(g, "d-b", {});
    CHECK(g.find_triple(untouched)->usage_count == before.find_triple(untouched)->usage_count + 2);
    CHECK(b2.paths.empty());

    GraphStore store(evidence_graph());
    build_bundle(store, "d-a", {"s-a"});
    CHECK(store.version() == 1);
    CHECK(store.snapshot()->find_triple(TripleKey{"d-a", "has_symptom", "s-a"})->usage_count == 2);
}

TEST_CASE("rankings reorder known lines and keep omitted ones last") {
    const auto b = assemble_bundle(evidence_graph(), "d-a", {"s-a"});
    const Json ranking = {{"symptoms", {"d-a|has_symptom|s-shared", "bogus", "d-a|has_symptom|s-shared"}},
                          {"drugs", {"dr-y|second_line_treats|d-a", "dr-x|treats|d-a"}}};
    const auto r = apply_ranking(b, ranking);
    CHECK(r.symptom_edges[0].triple.object == "s-shared");
    CHECK(r.symptom_edges[1].triple.object == "s-a");
    CHECK(r.symptom_edges[1].rank == 2);
    CHECK(r.drug_edges[0].triple.subject == "dr-y");
    CHECK(r.warnings.size() == 2);

    auto gw = scripted({entry(TemplateId::rank_evidence,
                              "## symptoms\n1. d-a|has_symptom|s-shared\n2. d-a|has_symptom|s-a\n## drugs\n"
                              "- dr-x|treats|d-a\n- dr-y|second_line_treats|d-a\n")});
    const auto ranked = rank_evidence(b, "history", gw);
    CHECK(ranked.symptom_edges[0].triple.object == "s-shared");
    CHECK(ranked.drug_edges[0].triple.subject == "dr-x");
    CHECK(ranked.warnings.empty());
}

TEST_CASE("drug expansion is scoped to bundle drugs and idempotent") {
    auto g = evidence_graph();
    g.add_triple(make_triple("dr-x", "treats", "d-b"));
    auto b = assemble_bundle(g, "d-a", {});
    expand_drug(b, g, "dr-x");
    REQUIRE(b.drug_extended.at("dr-x").size() == 1);
    CHECK(b.drug_extended.at("dr-x")[0].entity.id == "d-b");
    expand_drug(b, g, "dr-x");
    CHECK(b.drug_extended.size() == 1);
    CHECK(b.entity_ids().count("d-b") == 1);
    try {
        expand_drug(b, g, "dr-zzz");
        FAIL("expected not_found");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::not_found);
    }

    const auto dumped = to_json(b, &g);
    CHECK(dumped.at("entity_names").at("dr-x") == "xylomab");
    CHECK(to_json(evidence_bundle_from_json(dumped)) == to_json(b));
}

TEST_CASE("reports are generated, edited, finalized and then frozen") {
    const auto g = evidence_graph();
    const auto b = assemble_bundle(g, "d-a", {"s-a"});
    auto gw = scripted({entry(TemplateId::reason,
                              "1. Alpha rash points to alpha fever.\n2. Shared ache fits.\nTreatment:\n- xylomab\n"),
                        entry(TemplateId::patient_rewrite, "You most likely have alpha fever.")});
    auto report = generate_report("history", b, g, "alpha fever", gw);
    CHECK(report.disease_id == "d-a");
    CHECK(report.steps.size() == 2);
    CHECK(report.treatment_items == std::vector<std::string>{"xylomab"});

    apply_report_edit(report, edit("steps", "insert", 2, "No wheeze argues against beta cough."));
    apply_report_edit(report, edit("treatment_items", "replace", 0, "xylomab 10 mg"));
    apply_report_edit(report, edit("steps", "delete", 1));
    CHECK(report.steps.size() == 2);
    CHECK(report.steps[1] == "No wheeze argues against beta cough.");
    CHECK(report.treatment_items[0] == "xylomab 10 mg");
    CHECK(report.edit_log.size() == 3);
    CHECK_THROWS_AS(apply_report_edit(report, edit("steps", "replace", 9, "x")), Error);
    CHECK_THROWS_AS(apply_report_edit(report, edit("summary", "insert", 0, "x")), Error);
    CHECK_THROWS_AS(apply_report_edit(report, edit("steps", "insert", 0, " ")), Error);
    auto anonymous = edit("steps", "delete", 0);
    anonymous.actor.clear();
    CHECK_THROWS_AS(apply_report_edit(report, anonymous), Error);
    CHECK(report.edit_log.size() == 3);

    const auto now = parse_rfc3339("2026-03-02T11:00:00Z");
    try {
        finalize_report(report, {"alpha fever", "", "two weeks", " "}, gw, "dr-lee", now);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.fields() == std::vector<std::string>{"plan", "precautions"});
    }
    CHECK_FALSE(report.finalized());

    const auto text = finalize_report(report, {"alpha fever", "rest", "two weeks", "return if worse"}, gw, "dr-lee", now);
    CHECK(text == "You most likely have alpha fever.");
    CHECK(report.finalized_by == "dr-lee");
    CHECK(report.finalized_at == now);
    CHECK_THROWS_AS(apply_report_edit(report, edit("steps", "delete", 0)), Error);
    CHECK_THROWS_AS(finalize_report(report, {"a", "b", "c", "d"}, gw, "dr-lee", now), Error);

    const auto j = to_json(report);
    CHECK(to_json(reasoning_report_from_json(j)) == j);
}

TEST_CASE("annotation matches whole entity names in the bundle") {
    const auto g = evidence_graph();
    const auto b = assemble_bundle(g, "d-a", {"s-a"});
    const auto ids = annotate("Alpha-fever with a SHARED ache; xylomab helps. alphafever, xylomabs", b, g);
    CHECK(ids == std::vector<std::string>{"d-a", "dr-x", "s-shared"});
    CHECK(annotate("beta wheeze", b, g).empty());
}

TEST_CASE("fixture bundle for eye strain") {
    const auto g = fixture_graph();
    const auto b = assemble_bundle(g, "d-eyestrain", {"s-headache", "s-eyepain"});
    CHECK(b.definition->find("near work") != std::string::npos);
    CHECK(b.symptom_edges.size() == 4);
    CHECK(b.drug_edges.size() == 1);
    CHECK(b.drug_edges[0].triple.subject == "dr-tears");
    CHECK(b.paths.size() == 2);
}
