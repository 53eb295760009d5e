#pragma once

#include "kgdx/graph_store.hpp"
#include "kgdx/linker.hpp"
#include "kgdx/llm_gateway.hpp"

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace kgdx {

// Controlled relation vocabulary for drafted subgraphs. Treatment relations
// point from drug to disease; the others point from the disease outward.
namespace rel {
inline constexpr std::string_view has_symptom = "has_symptom";
inline constexpr std::string_view red_flag_symptom = "red_flag_symptom";
inline constexpr std::string_view has_definition = "has_definition";
inline constexpr std::string_view treats = "treats";
inline constexpr std::string_view second_line_treats = "second_line_treats";
inline constexpr std::string_view typical_course_note = "typical_course_note";
} // namespace rel

bool is_controlled_relation(std::string_view relation);

// Normalized names of the mandated draft headings, in display order.
inline constexpr std::array<std::string_view, 6> kDraftHeadings = {
    "definition",         "core symptoms",          "red flag symptoms",
    "typical course",     "first line treatments",  "second line treatments",
};

enum class TriggerKind { absent, unused, stale };
enum class EventStatus { pending, drafted, under_review, approved, merged, rejected };
enum class EditKind { add_triple, delete_triple, relabel_relation, edit_text, rebalance_note };

std::string_view to_string(TriggerKind t);
std::string_view to_string(EventStatus s);
std::string_view to_string(EditKind k);
TriggerKind trigger_kind_from_string(std::string_view text);
EventStatus event_status_from_string(std::string_view text);
EditKind edit_kind_from_string(std::string_view text);

bool is_terminal(EventStatus s);
// Allowed forward moves; rejected is reachable from every pre-merge status.
bool can_transition(EventStatus from, EventStatus to);

struct EvolutionConfig {
    double epsilon_t = 0.90;
    std::chrono::seconds staleness_threshold = std::chrono::days{365};
};

void validate(const EvolutionConfig& config);

// Payloads by kind:
//   add_triple        {"subject","relation","object", "new_entities"?: [{"id"?,"name","kind"}]}
//   delete_triple     {"subject","relation","object"}
//   relabel_relation  {"subject","relation","object","new_relation"}
//   edit_text         {"text"}
//   rebalance_note    {"note"}
struct EditAction {
    EditKind kind = EditKind::rebalance_note;
    Json payload = Json::object();
    std::string actor;
    Timestamp at;
};

struct NearDuplicate {
    Triple triple;
    TripleKey matched_existing;
    double similarity = 0.0;
};

struct DedupReport {
    int exact_removed = 0;
    std::vector<NearDuplicate> near_removed;
};

struct RemovedDraftTriple {
    Triple triple;
    std::string reason;  // exact_duplicate | near_duplicate | expert_delete
};

struct EvolutionDiff {
    std::vector<Entity> added_entities;
    std::vector<Triple> added_triples;
    std::vector<RemovedDraftTriple> removed_draft_triples;
};

struct EvolutionEvent {
    std::string id;
    std::string disease_name;
    std::optional<std::string> disease_id;
    TriggerKind trigger = TriggerKind::absent;
    EventStatus status = EventStatus::pending;
    std::optional<std::string> draft_text;
    std::optional<std::vector<Triple>> draft_triples;
    // Entities introduced by the draft or by expert edits, merged alongside
    // the triples that reference them.
    std::vector<Entity> staged_entities;
    std::optional<DedupReport> dedup_report;
    std::vector<EditAction> expert_edits;
    std::optional<EvolutionDiff> merged_diff;
    std::vector<std::string> diagnostics;
    std::uint64_t version = 0;
    Timestamp created_at;
};

Json to_json(const EvolutionEvent& e);
EvolutionEvent evolution_event_from_json(const Json& j);
Json to_json(const DedupReport& r);
Json to_json(const EvolutionDiff& d);

// A disease under consideration: a KG id when linked, else just its name.
struct DiseaseRef {
    std::string name;
    std::optional<std::string> id;
};

// One event per disease that is absent, unused (no incident triple ever used,
// and not evolved within the staleness window) or stale. Diseases with an
// open event are skipped. Returned events have empty ids.
std::vector<EvolutionEvent> detect_triggers(const KnowledgeGraph& graph,
                                            const std::vector<DiseaseRef>& diseases,
                                            const EvolutionConfig& config, Timestamp now,
                                            const std::vector<EvolutionEvent>& existing = {});

struct RedundancyResult {
    DedupReport report;
    std::vector<Triple> survivors;
};

// Exact duplicates of graph triples (or of earlier batch entries) are dropped;
// each remaining triple is dropped when the embedding of its
// "subject relation object" text reaches epsilon_t against any graph triple.
RedundancyResult check_redundancy(const std::vector<Triple>& draft, const std::vector<Entity>& staged,
                                  const KnowledgeGraph& graph, const EmbeddingProvider& provider,
                                  const EvolutionConfig& config);

// Thread-safe store of evolution events with optional JSONL persistence.
// Every mutating call accepts the caller's last seen version; a stale
// version raises a conflict.
class Worklist {
public:
    Worklist() = default;
    // Replays events.jsonl (last record per id wins).
    static std::unique_ptr<Worklist> open(const std::filesystem::path& file);

    // Runs detect_triggers against the open events and stores new ones.
    std::vector<EvolutionEvent> detect(const KnowledgeGraph& graph, const std::vector<DiseaseRef>& diseases,
                                       const EvolutionConfig& config, Timestamp now);

    std::vector<EvolutionEvent> list() const;
    std::vector<EvolutionEvent> active() const;
    EvolutionEvent get(const std::string& id) const;

    EvolutionEvent draft(const std::string& id, const KnowledgeGraph& graph, Gateway& gateway,
                         const EmbeddingProvider& provider, const EvolutionConfig& config,
                         std::optional<std::uint64_t> expected_version = {});
    EvolutionEvent edit(const std::string& id, EditAction action, const KnowledgeGraph& graph,
                        std::optional<std::uint64_t> expected_version = {});
    EvolutionDiff approve(const std::string& id, GraphStore& store, const EmbeddingProvider& provider,
                          const EvolutionConfig& config, const std::string& reviewer, Timestamp now,
                          std::optional<std::uint64_t> expected_version = {});
    EvolutionEvent reject(const std::string& id, const std::string& actor, Timestamp now,
                          std::optional<std::uint64_t> expected_version = {});
    EvolutionDiff diff(const std::string& id) const;

private:
    EvolutionEvent& locate(const std::string& id, std::optional<std::uint64_t> expected_version);
    void commit(EvolutionEvent& e);
    std::string next_entity_id(const KnowledgeGraph& graph, const std::vector<Entity>& staged);

    mutable std::mutex mutex_;
    // Serializes approvals so an event merges at most once.
    std::mutex approve_mutex_;
    std::map<std::string, EvolutionEvent> events_;
    std::uint64_t next_event_ = 1;
    std::uint64_t next_entity_ = 1;
    std::optional<std::filesystem::path> file_;
};

// Stand-alone steps used by Worklist; exposed for tests.
EvolutionEvent draft_subgraph(EvolutionEvent event, const KnowledgeGraph& graph, Gateway& gateway,
                              const std::function<std::string()>& new_entity_id);
EvolutionEvent apply_expert_edit(EvolutionEvent event, const EditAction& action, const KnowledgeGraph& graph,
                                 const std::function<std::string()>& new_entity_id);

// Text form used for prompts and similarity: "subject relation object" with
// entity names resolved through the graph and the staged entities.
std::string triple_text(const Triple& t, const KnowledgeGraph& graph, const std::vector<Entity>& staged);

} // namespace kgdx
