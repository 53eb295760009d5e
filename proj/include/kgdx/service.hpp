#pragma once

#include "kgdx/config.hpp"
#include "kgdx/diagnosis.hpp"
#include "kgdx/evidence.hpp"
#include "kgdx/evolution.hpp"
#include "kgdx/graph_store.hpp"
#include "kgdx/history.hpp"
#include "kgdx/layout.hpp"
#include "kgdx/linker.hpp"
#include "kgdx/llm_gateway.hpp"

#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kgdx {

enum class SessionStatus { collecting, awaiting_physician, in_review, completed };

std::string_view to_string(SessionStatus s);
SessionStatus session_status_from_string(std::string_view text);

// One server-sent event. `type` is prompt_delta, history_delta,
// status_change or final_explanation.
struct StreamEvent {
    std::uint64_t id = 0;  // 1-based position in the session's stream
    std::string type;
    Json data;

    bool operator==(const StreamEvent&) const = default;
};

// "id: N\nevent: TYPE\ndata: JSON\n\n"
std::string format_sse(const StreamEvent& event);

struct Notification {
    Timestamp at;
    std::string kind;  // status | handover | explanation
    std::string text;

    bool operator==(const Notification&) const = default;
};

struct Session {
    std::string id;
    std::string patient_id;
    Timestamp created_at;
    DialogueState dialogue;
    SessionStatus status = SessionStatus::collecting;
    std::optional<DiagnosisRecord> diagnosis;
    std::optional<std::string> diagnosis_error;
    std::map<std::string, EvidenceBundle> bundles;
    std::map<std::string, ReasoningReport> reports;
    std::optional<LayoutResult> default_layout;
    std::optional<LayoutResult> active_layout;
    std::optional<std::string> active_diagnosis;
    std::optional<std::string> assigned_physician;
    std::optional<Timestamp> handover_at;
    std::optional<std::string> finalized_by;
    std::optional<Timestamp> finalized_at;
    std::optional<std::string> explanation;
    std::vector<StreamEvent> events;
    std::vector<Notification> notifications;
    Json provider_state = Json::object();
};

Json to_json(const Session& s);
Session session_from_json(const Json& j);

// Keys that carry diagnostic content. None may reach a patient.
const std::set<std::string>& diagnosis_field_keys();
// Every object key in `j` (recursively) that belongs to diagnosis_field_keys().
std::vector<std::string> diagnosis_fields_in(const Json& j);

// Splits text into chunks of at most `max_chars` at spaces; concatenating the
// chunks gives back the input.
std::vector<std::string> chunk_text(const std::string& text, std::size_t max_chars = 48);

Json bars_json(const DiagnosisRecord& record);
// Layout plus hover metadata (kind, definition, provenance) for nodes and edges.
Json layout_payload(const LayoutResult& layout, const KnowledgeGraph& graph);

using ProviderFactory = std::function<std::shared_ptr<LlmProvider>(const std::string& session_id)>;

struct ServiceOptions {
    AppConfig config;
    std::shared_ptr<GraphStore> store;
    std::shared_ptr<Worklist> worklist;
    std::shared_ptr<const EmbeddingProvider> embedder;
    std::shared_ptr<const PromptLibrary> prompts;
    // One provider per session, so scripted mocks do not share counters.
    ProviderFactory session_provider;
    // Drafting for the expert worklist.
    std::shared_ptr<LlmProvider> expert_provider;
    std::shared_ptr<const Clock> clock;
    // Session journals and transcripts; unset keeps sessions in memory.
    std::optional<std::filesystem::path> sessions_dir;
};

// Transport-independent API. Every call takes the authenticated caller and
// enforces the role rules: patients see only their own sessions and never
// diagnostic content; physicians run cases; experts own the worklist.
class Service {
public:
    explicit Service(ServiceOptions options);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Opens (or seeds) the KG store, worklist and session journals under
    // storage.dir. A corrupted journal record is a startup error.
    static std::unique_ptr<Service> from_config(const AppConfig& config,
                                                std::shared_ptr<const Clock> clock = nullptr);

    Caller authenticate(const std::string& token) const;

    Json health() const;

    // Patient.
    Json create_session(const Caller& caller);
    std::vector<StreamEvent> post_message(const Caller& caller, const std::string& session_id,
                                          const std::string& text);
    Json get_history(const Caller& caller, const std::string& session_id);
    Json get_final_explanation(const Caller& caller, const std::string& session_id);
    Json get_notifications(const Caller& caller, const std::string& session_id);
    std::vector<StreamEvent> events_since(const Caller& caller, const std::string& session_id, std::uint64_t after);

    // Patient (own sessions, redacted) or physician (full).
    Json get_session(const Caller& caller, const std::string& session_id);
    Json list_sessions(const Caller& caller);

    // Physician.
    Json open_case(const Caller& caller, const std::string& session_id);
    Json get_diagnosis(const Caller& caller, const std::string& session_id);
    Json select_diagnosis(const Caller& caller, const std::string& session_id, const std::string& disease_id);
    Json expand(const Caller& caller, const std::string& session_id, const std::string& entity_id);
    Json edit_report(const Caller& caller, const std::string& session_id, const std::string& disease_id,
                     const Json& edit);
    Json continue_conversation(const Caller& caller, const std::string& session_id, const std::string& text);
    Json finalize(const Caller& caller, const std::string& session_id, const Json& body);

    // Expert.
    Json get_worklist(const Caller& caller, bool include_closed = false);
    Json get_event(const Caller& caller, const std::string& event_id);
    Json draft_event(const Caller& caller, const std::string& event_id, std::optional<std::uint64_t> version = {});
    Json post_edit(const Caller& caller, const std::string& event_id, const Json& action,
                   std::optional<std::uint64_t> version = {});
    Json approve(const Caller& caller, const std::string& event_id, std::optional<std::uint64_t> version = {});
    Json reject(const Caller& caller, const std::string& event_id, std::optional<std::uint64_t> version = {});
    Json get_diff(const Caller& caller, const std::string& event_id);

    // Physician or expert.
    Json kg_triples(const Caller& caller, const std::optional<std::string>& entity_id);
    Json kg_entity(const Caller& caller, const std::string& entity_id);

    // Blocks until the session's background diagnosis (if any) has finished.
    void wait_for_diagnosis(const std::string& session_id);
    Session session(const std::string& session_id) const;
    std::vector<std::string> session_ids() const;

    GraphStore& store() { return *options_.store; }
    Worklist& worklist() { return *options_.worklist; }
    const AppConfig& config() const { return options_.config; }
    const Clock& clock() const { return *options_.clock; }

private:
    struct Slot;

    std::shared_ptr<Slot> slot(const std::string& session_id) const;
    std::shared_ptr<Slot> own_slot(const Caller& caller, const std::string& session_id) const;
    std::shared_ptr<Slot> make_slot(Session session);
    void persist(Slot& slot, const std::string& event);
    StreamEvent push_event(Session& s, std::string type, Json data);
    void notify(Session& s, std::string kind, std::string text);
    void start_pipeline(const std::shared_ptr<Slot>& slot);
    void run_pipeline(Slot& slot, const DialogueState& dialogue);
    void ensure_diagnosis(const std::shared_ptr<Slot>& slot);
    Json case_payload(const Session& s, const KnowledgeGraph& graph) const;
    void rebuild_default_layout(Session& s, const KnowledgeGraph& graph) const;
    void load_sessions();

    ServiceOptions options_;
    std::unique_ptr<Gateway> expert_gateway_;
    mutable std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> sessions_;
    std::uint64_t next_session_ = 1;
};

} // namespace kgdx
