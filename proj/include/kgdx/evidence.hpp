#pragma once

#include "kgdx/graph_store.hpp"
#include "kgdx/llm_gateway.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kgdx {

enum class EvidenceLabel { subjective_symptom, objective_guideline, inferred_reasoning };

std::string_view to_string(EvidenceLabel l);

struct RankedTriple {
    Triple triple;
    int rank = 0;  // 1 = most important
};

struct EvidenceBundle {
    std::string disease_id;
    std::optional<std::string> definition;
    std::optional<Triple> definition_edge;
    std::vector<RankedTriple> symptom_edges;
    // Linked symptom → shortest path from the disease; unreachable ones absent.
    std::map<std::string, std::vector<std::string>> paths;
    std::vector<Triple> path_edges;
    std::vector<RankedTriple> drug_edges;
    // Filled on demand through expand_drug().
    std::map<std::string, std::vector<Neighbor>> drug_extended;
    std::vector<std::string> linked_symptoms;
    std::map<std::string, EvidenceLabel> labels;  // key "s|r|o"
    std::vector<std::string> warnings;

    // Distinct keys of every triple the bundle carries.
    std::vector<TripleKey> included() const;
    // Entity ids mentioned anywhere in the bundle.
    std::set<std::string> entity_ids() const;
};

// `graph` supplies display names for the UI; pass nullptr to omit them.
Json to_json(const EvidenceBundle& b, const KnowledgeGraph* graph = nullptr);
EvidenceBundle evidence_bundle_from_json(const Json& j);

// Assembles all categories from the graph and bumps usage of every included
// triple exactly once.
EvidenceBundle build_bundle(KnowledgeGraph& graph, const std::string& disease_id,
                            const std::vector<std::string>& linked_symptoms);
// Same on a live store: built from a snapshot, usage recorded in one update.
EvidenceBundle build_bundle(GraphStore& store, const std::string& disease_id,
                            const std::vector<std::string>& linked_symptoms);
// Assembly only, without usage accounting.
EvidenceBundle assemble_bundle(const KnowledgeGraph& graph, const std::string& disease_id,
                               const std::vector<std::string>& linked_symptoms);

// Applies a model-proposed ordering per category. Unknown or altered lines
// are ignored; items left out keep their original order after the ranked ones.
EvidenceBundle apply_ranking(EvidenceBundle bundle, const Json& ranking);
EvidenceBundle rank_evidence(EvidenceBundle bundle, const std::string& history_text, Gateway& gateway);

// Patient-reported symptom endpoint → subjective; reviewer present →
// objective; otherwise inferred. Checked in that order.
EvidenceLabel label_for(const Triple& t, const std::set<std::string>& patient_symptoms);
EvidenceBundle categorize_evidence(EvidenceBundle bundle);

void expand_drug(EvidenceBundle& bundle, const KnowledgeGraph& graph, const std::string& drug_id);

struct ReportEdit {
    std::string target;  // steps | treatment_items
    std::string op;      // replace | insert | delete
    std::size_t index = 0;
    std::string text;
    std::string actor;
    Timestamp at;
};

Json to_json(const ReportEdit& e);

struct FinalizeFields {
    std::string conclusion;
    std::string plan;
    std::string follow_up;
    std::string precautions;
};

struct ReasoningReport {
    std::string disease_id;
    std::vector<std::string> steps;
    std::vector<std::string> treatment_items;
    std::optional<std::string> patient_facing_text;
    std::optional<std::string> finalized_by;
    std::optional<Timestamp> finalized_at;
    std::optional<FinalizeFields> fields;
    std::vector<ReportEdit> edit_log;

    bool finalized() const { return finalized_by.has_value(); }
};

Json to_json(const ReasoningReport& r);
ReasoningReport reasoning_report_from_json(const Json& j);

ReasoningReport generate_report(const std::string& history_text, const EvidenceBundle& bundle,
                                const KnowledgeGraph& graph, const std::string& disease_name, Gateway& gateway);
void apply_report_edit(ReasoningReport& report, ReportEdit edit);
std::string finalize_report(ReasoningReport& report, const FinalizeFields& fields, Gateway& gateway,
                            const std::string& physician, Timestamp now);

// Ids of bundle entities whose names occur in `text`, for cross-panel links.
std::vector<std::string> annotate(const std::string& text, const EvidenceBundle& bundle, const KnowledgeGraph& graph);

} // namespace kgdx
