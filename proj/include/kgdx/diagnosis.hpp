#pragma once

#include "kgdx/evolution.hpp"
#include "kgdx/graph_store.hpp"
#include "kgdx/history.hpp"
#include "kgdx/linker.hpp"
#include "kgdx/llm_gateway.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kgdx {

struct RecognizedSymptoms {
    std::vector<std::string> mentions;
    std::vector<LinkResult> links;  // one per mention
    std::vector<std::string> linked;  // distinct matched symptom ids, first-seen order
};

enum class CandidateSource { kg, llm, both };

std::string_view to_string(CandidateSource s);
CandidateSource candidate_source_from_string(std::string_view text);

struct CandidateDiagnosis {
    std::string disease_id;
    std::string name;
    CandidateSource source = CandidateSource::kg;
    double kg_score = 0.0;
    std::map<std::string, std::optional<std::size_t>> distances;  // linked symptom → edges
    std::optional<double> llm_likelihood;
    std::optional<double> relative_likelihood;
    int severity = 0;
};

Json to_json(const CandidateDiagnosis& c);
CandidateDiagnosis candidate_from_json(const Json& j);

struct SymptomNeighbor {
    std::string symptom_id;
    std::string name;
    std::string relation;
    double similarity = -1.0;  // best cosine against any linked symptom
    std::optional<std::string> closest_linked;
};

struct CandidateContext {
    std::string disease_id;
    std::string name;
    std::string definition;
    std::vector<SymptomNeighbor> symptoms;    // similarity ≥ epsilon_s
    std::vector<SymptomNeighbor> background;  // below threshold
    std::map<std::string, std::optional<std::vector<std::string>>> paths;  // linked symptom → path
    std::vector<TripleKey> triples;  // triples consulted for this context
};

struct EvidenceContext {
    std::vector<CandidateContext> candidates;
};

Json to_json(const EvidenceContext& c);
EvidenceContext evidence_context_from_json(const Json& j);

struct DiagnosisConfig {
    LinkerConfig linker;
    std::size_t k = 3;
    std::size_t kg_top = 3;
    std::size_t neighbor_cap = 10;
};

void validate(const DiagnosisConfig& config);

// Mentions from the `recognize` call, deduplicated (normalized) in order.
std::vector<std::string> recognize_symptoms(const std::string& history_text, Gateway& gateway);
RecognizedSymptoms link_symptoms(const std::vector<std::string>& mentions, const SimilarityIndex& symptom_index,
                                 const LinkerConfig& config);

// Sum of 1/distance over every linked symptom reachable from the disease.
double kg_score(const KnowledgeGraph& graph, const std::string& disease_id, const std::vector<std::string>& linked,
                std::map<std::string, std::optional<std::size_t>>* distances = nullptr);

// Diseases one hop from any linked symptom, scored over all linked symptoms;
// best `top` by score, ties by id ascending.
std::vector<CandidateDiagnosis> kg_candidates(const KnowledgeGraph& graph, const std::vector<std::string>& linked,
                                              std::size_t top = 3);

struct CombineResult {
    std::vector<CandidateDiagnosis> candidates;
    std::vector<std::string> unlinked_names;
};

// Union by disease id. LLM names are linked against the disease index; names
// that fail to link are reported separately and left out.
CombineResult combine_candidates(const KnowledgeGraph& graph, const std::vector<CandidateDiagnosis>& kg_top,
                                 const std::vector<DdxEntry>& preliminary_ddx, const SimilarityIndex& disease_index,
                                 const std::vector<std::string>& linked, const LinkerConfig& config);

EvidenceContext build_evidence_context(const KnowledgeGraph& graph, const std::vector<CandidateDiagnosis>& candidates,
                                       const std::vector<std::string>& linked, const SimilarityIndex& symptom_index,
                                       const DiagnosisConfig& config);

std::string render_context_text(const KnowledgeGraph& graph, const EvidenceContext& context);

struct RankResult {
    std::vector<CandidateDiagnosis> ranked;    // every candidate, scored and ordered
    std::vector<CandidateDiagnosis> selected;  // first min(k, n)
    std::vector<std::string> warnings;
};

// Orders by (llm_likelihood desc, kg_score desc, disease id).
void sort_ranked(std::vector<CandidateDiagnosis>& candidates);

RankResult rank_and_select(const std::string& history_text, const KnowledgeGraph& graph, const EvidenceContext& context,
                           std::vector<CandidateDiagnosis> candidates, Gateway& gateway, std::size_t k = 3);

struct DiagnosisRecord {
    RecognizedSymptoms symptoms;
    std::vector<CandidateDiagnosis> kg_top;
    std::vector<CandidateDiagnosis> combined;
    std::vector<CandidateDiagnosis> candidates;  // final selection
    EvidenceContext evidence_context;
    std::vector<std::string> unlinked_names;
    std::vector<std::string> evolution_events;
    std::vector<std::string> warnings;
};

// Deterministic: equal records serialize to identical bytes.
Json to_json(const DiagnosisRecord& record);
DiagnosisRecord diagnosis_record_from_json(const Json& j);

struct PipelineDeps {
    GraphStore& store;
    std::shared_ptr<const EmbeddingProvider> embedder;
    Gateway& gateway;
    Worklist* worklist = nullptr;
    EvolutionConfig evolution;
    const Clock& clock;
};

// recognize → link → KG candidates → combine → triggers → context → rank.
// Triples consulted for the evidence context are marked used afterwards.
DiagnosisRecord run_diagnosis(const HistoryExport& history, PipelineDeps deps, const DiagnosisConfig& config);

// Repeats recognize → rank over the previous combined candidates against the
// current graph snapshot; candidate generation and triggers are not rerun.
DiagnosisRecord rerank_diagnosis(const std::string& history_text, const DiagnosisRecord& previous,
                                 PipelineDeps deps, const DiagnosisConfig& config);

} // namespace kgdx
