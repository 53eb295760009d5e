#include "kgdx/service.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>

namespace kgdx {

namespace fs = std::filesystem;

std::string_view to_string(SessionStatus s) {
    switch (s) {
        case SessionStatus::collecting: return "collecting";
        case SessionStatus::awaiting_physician: return "awaiting_physician";
        case SessionStatus::in_review: return "in_review";
        case SessionStatus::completed: return "completed";
    }
    return "collecting";
}

SessionStatus session_status_from_string(std::string_view text) {
    for (auto s : {SessionStatus::collecting, SessionStatus::awaiting_physician, SessionStatus::in_review,
                   SessionStatus::completed}) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::invalid_argument, "unknown session status '" + std::string(text) + "'");
}

std::string format_sse(const StreamEvent& event) {
    return "id: " + std::to_string(event.id) + "\nevent: " + event.type + "\ndata: " + event.data.dump() + "\n\n";
}

namespace {

Json time_json(const std::optional<Timestamp>& t) { return t ? Json(format_rfc3339(*t)) : Json(nullptr); }

std::optional<Timestamp> time_field(const Json& j, const char* key) {
    auto s = optional_field<std::string>(j, key);
    return s ? std::optional<Timestamp>(parse_rfc3339(*s)) : std::nullopt;
}

Json str_json(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }

Json message_json(const Message& m) {
    return {{"role", m.role}, {"text", m.text}, {"at", format_rfc3339(m.at)}};
}

} // namespace

Json to_json(const Session& s) {
    Json bundles = Json::object();
    for (const auto& [id, b] : s.bundles) bundles[id] = to_json(b);
    Json reports = Json::object();
    for (const auto& [id, r] : s.reports) reports[id] = to_json(r);
    Json events = Json::array();
    for (const auto& e : s.events) events.push_back({{"id", e.id}, {"type", e.type}, {"data", e.data}});
    Json notifications = Json::array();
    for (const auto& n : s.notifications) {
        notifications.push_back({{"at", format_rfc3339(n.at)}, {"kind", n.kind}, {"text", n.text}});
    }
    return {{"id", s.id},
            {"patient_id", s.patient_id},
            {"created_at", format_rfc3339(s.created_at)},
            {"dialogue", to_json(s.dialogue)},
            {"status", to_string(s.status)},
            {"diagnosis", s.diagnosis ? to_json(*s.diagnosis) : Json(nullptr)},
            {"diagnosis_error", str_json(s.diagnosis_error)},
            {"bundles", bundles},
            {"reports", reports},
            {"default_layout", s.default_layout ? to_json(*s.default_layout) : Json(nullptr)},
            {"active_layout", s.active_layout ? to_json(*s.active_layout) : Json(nullptr)},
            {"active_diagnosis", str_json(s.active_diagnosis)},
            {"assigned_physician", str_json(s.assigned_physician)},
            {"handover_at", time_json(s.handover_at)},
            {"finalized_by", str_json(s.finalized_by)},
            {"finalized_at", time_json(s.finalized_at)},
            {"explanation", str_json(s.explanation)},
            {"events", events},
            {"notifications", notifications},
            {"provider_state", s.provider_state}};
}

Session session_from_json(const Json& j) {
    Session s;
    s.id = j.at("id").get<std::string>();
    s.patient_id = j.at("patient_id").get<std::string>();
    s.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
    s.dialogue = dialogue_state_from_json(j.at("dialogue"));
    s.status = session_status_from_string(j.at("status").get<std::string>());
    if (const auto& d = j.at("diagnosis"); !d.is_null()) s.diagnosis = diagnosis_record_from_json(d);
    s.diagnosis_error = optional_field<std::string>(j, "diagnosis_error");
    for (const auto& [id, b] : j.at("bundles").items()) s.bundles[id] = evidence_bundle_from_json(b);
    for (const auto& [id, r] : j.at("reports").items()) s.reports[id] = reasoning_report_from_json(r);
    if (const auto& l = j.at("default_layout"); !l.is_null()) s.default_layout = layout_from_json(l);
    if (const auto& l = j.at("active_layout"); !l.is_null()) s.active_layout = layout_from_json(l);
    s.active_diagnosis = optional_field<std::string>(j, "active_diagnosis");
    s.assigned_physician = optional_field<std::string>(j, "assigned_physician");
    s.handover_at = time_field(j, "handover_at");
    s.finalized_by = optional_field<std::string>(j, "finalized_by");
    s.finalized_at = time_field(j, "finalized_at");
    s.explanation = optional_field<std::string>(j, "explanation");
    for (const auto& e : j.at("events")) {
        s.events.push_back({e.at("id").get<std::uint64_t>(), e.at("type").get<std::string>(), e.at("data")});
    }
    for (const auto& n : j.at("notifications")) {
        s.notifications.push_back(
            {parse_rfc3339(n.at("at").get<std::string>()), n.at("kind").get<std::string>(), n.at("text").get<std::string>()});
    }
    s.provider_state = j.value("provider_state", Json::object());
    return s;
}

const std::set<std::string>& diagnosis_field_keys() {
    static const std::set<std::string> keys = {
        "ddx",          "preliminary_ddx", "disease_name",     "likelihood",   "rationale",
        "candidates",   "kg_candidates",   "combined",         "kg_score",     "llm_likelihood",
        "relative_likelihood", "disease_id", "evidence_context", "evidence",   "steps",
        "treatment_items", "bars",         "diagnosis",        "reports",      "unlinked_names",
        "evolution_events", "layout",      "default_layout",   "active_diagnosis",
    };
    return keys;
}

std::vector<std::string> diagnosis_fields_in(const Json& j) {
    std::vector<std::string> found;
    const auto& keys = diagnosis_field_keys();
    auto walk = [&](const auto& self, const Json& node) -> void {
        if (node.is_object()) {
            for (const auto& [k, v] : node.items()) {
                if (keys.count(k)) found.push_back(k);
                self(self, v);
            }
        } else if (node.is_array()) {
            for (const auto& v : node) self(self, v);
        }
    };
    walk(walk, j);
    return found;
}

std::vector<std::string> chunk_text(const std::string& text, std::size_t max_chars) {
    if (max_chars == 0) throw Error(ErrorCode::invalid_argument, "chunk size must be positive");
    // Pieces are a word plus the spaces after it.
    std::vector<std::string> pieces;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        while (j < text.size() && text[j] == ' ') ++j;
        pieces.push_back(text.substr(i, j - i));
        i = j;
    }
    std::vector<std::string> out;
    std::string current;
    for (const auto& p : pieces) {
        if (!current.empty() && current.size() + p.size() > max_chars) {
            out.push_back(std::move(current));
            current.clear();
        }
        current += p;
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

Json bars_json(const DiagnosisRecord& record) {
    Json bars = Json::array();
    for (std::size_t i = 0; i < record.candidates.size(); ++i) {
        const auto& c = record.candidates[i];
        bars.push_back({{"rank", i + 1},
                        {"disease_id", c.disease_id},
                        {"name", c.name},
                        {"relative_likelihood", c.relative_likelihood.value_or(0.0)},
                        {"llm_likelihood", c.llm_likelihood.value_or(0.0)},
                        {"severity", c.severity},
                        {"fill_intensity", static_cast<double>(c.severity) / 10.0},
                        {"kg_score", c.kg_score},
                        {"source", to_string(c.source)}});
    }
    return bars;
}

Json layout_payload(const LayoutResult& layout, const KnowledgeGraph& graph) {
    Json j = to_json(layout);
    for (auto& node : j["nodes"]) {
        const auto* e = graph.find(node["id"].get<std::string>());
        if (!e) continue;
        node["kind"] = to_string(e->kind);
        if (e->definition_text) node["definition_text"] = *e->definition_text;
        if (e->last_evolution) node["last_evolution"] = format_rfc3339(*e->last_evolution);
    }
    for (auto& edge : j["edges"]) {
        const auto relation = edge["relation"].get<std::string>();
        if (relation.empty()) continue;
        const auto* t = graph.find_triple({edge["from"].get<std::string>(), relation, edge["to"].get<std::string>()});
        if (!t) continue;
        edge["source"] = to_string(t->provenance.source);
        edge["reviewer"] = str_json(t->provenance.reviewer);
        edge["reviewed_at"] = time_json(t->provenance.reviewed_at);
        edge["usage_count"] = t->usage_count;
    }
    return j;
}

// ---------------------------------------------------------------------------

struct Service::Slot {
    std::mutex mutex;
    Session s;
    std::shared_ptr<LlmProvider> provider;
    std::unique_ptr<Gateway> gateway;
    std::shared_future<void> pipeline;
    std::optional<fs::path> journal;
    std::uint64_t records = 0;
};

namespace {

void require_role(const Caller& caller, Role role, std::string_view action) {
    if (caller.role != role) {
        throw Error(ErrorCode::forbidden, std::string(action) + " requires the " + std::string(to_string(role)) + " role");
    }
}

void require_assigned(const Session& s, const Caller& caller) {
    if (s.status == SessionStatus::collecting || s.status == SessionStatus::awaiting_physician) {
        throw Error(ErrorCode::conflict, "case " + s.id + " has not been opened by a physician");
    }
    if (s.assigned_physician != caller.user) {
        throw Error(ErrorCode::forbidden, "case " + s.id + " is assigned to another physician");
    }
}

void require_in_review(const Session& s) {
    if (s.status != SessionStatus::in_review) {
        throw Error(ErrorCode::conflict, "case " + s.id + " is " + std::string(to_string(s.status)));
    }
}

// Patient-facing rendering: dialogue and templates only.
Json patient_view(const Session& s) {
    Json messages = Json::array();
    for (const auto& m : s.dialogue.messages) {
        if (m.role == "system" || m.role == "patient") messages.push_back(message_json(m));
    }
    return {{"session_id", s.id},
            {"status", to_string(s.status)},
            {"messages", messages},
            {"history", history_to_json({s.dialogue.main_template, s.dialogue.other_template})},
            {"explanation", str_json(s.explanation)}};
}

Json summary(const Session& s) {
    return {{"session_id", s.id},
            {"patient_id", s.patient_id},
            {"status", to_string(s.status)},
            {"stage", to_string(s.dialogue.stage)},
            {"created_at", format_rfc3339(s.created_at)},
            {"assigned_physician", str_json(s.assigned_physician)},
            {"handover_at", time_json(s.handover_at)},
            {"finalized_by", str_json(s.finalized_by)},
            {"finalized_at", time_json(s.finalized_at)},
            {"diagnosis_ready", s.diagnosis.has_value()},
            {"diagnosis_error", str_json(s.diagnosis_error)}};
}

// History text for prompts, including information the physician added later.
std::string case_history_text(const Session& s) {
    auto text = render_history_text({s.dialogue.main_template, s.dialogue.other_template});
    for (const auto& m : s.dialogue.messages) {
        if (m.role == "physician") text += "\nAdditional information from the physician: " + m.text;
    }
    return text;
}

const CandidateDiagnosis& selected_candidate(const Session& s, const std::string& disease_id) {
    if (!s.diagnosis) throw Error(ErrorCode::invalid_state, "case " + s.id + " has no diagnosis yet");
    for (const auto& c : s.diagnosis->candidates) {
        if (c.disease_id == disease_id) return c;
    }
    throw Error(ErrorCode::not_found, "'" + disease_id + "' is not among the selected diagnoses");
}

Json annotations(const ReasoningReport& r, const EvidenceBundle& b, const KnowledgeGraph& graph) {
    Json steps = Json::array();
    for (const auto& s : r.steps) steps.push_back(annotate(s, b, graph));
    Json items = Json::array();
    for (const auto& t : r.treatment_items) items.push_back(annotate(t, b, graph));
    return {{"steps", steps}, {"treatment_items", items}};
}

std::string string_field(const Json& body, const char* key) {
    auto it = body.find(key);
    return it != body.end() && it->is_string() ? it->get<std::string>() : std::string{};
}

} // namespace

Service::Service(ServiceOptions options) : options_(std::move(options)) {
    if (!options_.store) options_.store = std::make_shared<GraphStore>();
    if (!options_.worklist) options_.worklist = std::make_shared<Worklist>();
    if (!options_.embedder) options_.embedder = std::make_shared<MockEmbeddingProvider>();
    if (!options_.prompts) options_.prompts = std::make_shared<const PromptLibrary>(PromptLibrary::load_default());
    if (!options_.clock) options_.clock = std::make_shared<SystemClock>();
    if (!options_.session_provider) {
        throw Error(ErrorCode::invalid_argument, "service needs a session provider factory");
    }
    if (!options_.expert_provider) {
        options_.expert_provider = std::make_shared<ScriptedMockProvider>(std::vector<ScriptEntry>{});
    }
    validate(options_.config);
    expert_gateway_ = std::make_unique<Gateway>(options_.prompts, options_.expert_provider,
                                                options_.config.llm.max_retries, options_.config.llm.backoff_ms);
    if (options_.sessions_dir) load_sessions();
}

Service::~Service() {
    std::vector<std::shared_ptr<Slot>> slots;
    {
        std::lock_guard lock(sessions_mutex_);
        for (const auto& [id, s] : sessions_) slots.push_back(s);
    }
    for (const auto& s : slots) {
        std::shared_future<void> f;
        {
            std::lock_guard lock(s->mutex);
            f = s->pipeline;
        }
        if (f.valid()) f.wait();
    }
}

std::unique_ptr<Service> Service::from_config(const AppConfig& config, std::shared_ptr<const Clock> clock) {
    ServiceOptions o;
    o.config = config;
    o.clock = clock ? std::move(clock) : std::make_shared<SystemClock>();
    auto seed = [&] {
        if (config.storage.kg_nodes.empty()) return KnowledgeGraph{};
        return import_graph_files(config.storage.kg_nodes, config.storage.kg_edges);
    };
    if (!config.storage.dir.empty()) {
        const fs::path root = config.storage.dir;
        const auto kg = root / "kg";
        if (!fs::exists(kg)) GraphStore::create(kg, seed());
        o.store = GraphStore::open(kg);
        o.worklist = Worklist::open(root / "worklist.jsonl");
        o.sessions_dir = root / "sessions";
    } else {
        o.store = std::make_shared<GraphStore>(seed());
        o.worklist = std::make_shared<Worklist>();
    }
    o.embedder = make_embedding_provider(config.embedding);
    o.prompts = std::make_shared<const PromptLibrary>(config.prompts_dir.empty() ? PromptLibrary::load_default()
                                                                                 : PromptLibrary::load(config.prompts_dir));
    const auto llm = config.llm;
    o.session_provider = [llm](const std::string&) { return make_provider(llm); };
    o.expert_provider = make_provider(llm);
    return std::make_unique<Service>(std::move(o));
}

Caller Service::authenticate(const std::string& token) const {
    auto it = options_.config.tokens.find(token);
    if (it == options_.config.tokens.end()) throw Error(ErrorCode::forbidden, "unknown role token");
    return it->second;
}

Json Service::health() const {
    const auto snap = options_.store->snapshot();
    std::size_t sessions = 0;
    {
        std::lock_guard lock(sessions_mutex_);
        sessions = sessions_.size();
    }
    return {{"status", "ready"},
            {"kg_version", options_.store->version()},
            {"entities", snap->entities().size()},
            {"triples", snap->triples().size()},
            {"sessions", sessions}};
}

// ---------------------------------------------------------------------------
// Session plumbing

std::shared_ptr<Service::Slot> Service::slot(const std::string& session_id) const {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw Error(ErrorCode::not_found, "no session '" + session_id + "'");
    return it->second;
}

std::shared_ptr<Service::Slot> Service::own_slot(const Caller& caller, const std::string& session_id) const {
    auto s = slot(session_id);
    if (caller.role == Role::expert) throw Error(ErrorCode::forbidden, "experts have no access to sessions");
    // patient_id never changes after creation.
    if (caller.role == Role::patient && s->s.patient_id != caller.user) {
        throw Error(ErrorCode::forbidden, "session belongs to another patient");
    }
    return s;
}

std::shared_ptr<Service::Slot> Service::make_slot(Session session) {
    auto slot = std::make_shared<Slot>();
    const auto id = session.id;
    slot->provider = options_.session_provider(id);
    std::shared_ptr<Transcript> transcript;
    if (options_.sessions_dir) {
        transcript = std::make_shared<Transcript>(*options_.sessions_dir / (id + ".transcript.jsonl"));
        slot->journal = *options_.sessions_dir / (id + ".jsonl");
    }
    slot->gateway = std::make_unique<Gateway>(options_.prompts, slot->provider, options_.config.llm.max_retries,
                                              options_.config.llm.backoff_ms, transcript);
    slot->s = std::move(session);
    std::lock_guard lock(sessions_mutex_);
    sessions_[id] = slot;
    return slot;
}

void Service::persist(Slot& slot, const std::string& event) {
    slot.s.provider_state = slot.provider->state();
    ++slot.records;
    if (!slot.journal) return;
    Json record = {{"seq", slot.records}, {"event", event}, {"session", to_json(slot.s)}};
    std::ofstream out(*slot.journal, std::ios::app);
    out << record.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::io, "cannot append to session journal " + slot.journal->string());
}

void Service::load_sessions() {
    const auto& dir = *options_.sessions_dir;
    fs::create_directories(dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (entry.path().extension() == ".jsonl" && name.find(".transcript.") == std::string::npos) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
        std::ifstream in(file);
        std::string line;
        std::size_t n = 0;
        std::optional<Session> last;
        while (std::getline(in, line)) {
            ++n;
            if (trim(line).empty()) continue;
            try {
                last = session_from_json(Json::parse(line).at("session"));
            } catch (const std::exception& e) {
                throw Error(ErrorCode::io, "corrupted session journal " + file.string() + " at record " +
                                               std::to_string(n) + ": " + e.what());
            }
        }
        if (!last) continue;
        const auto id = last->id;
        const auto state = last->provider_state;
        auto slot = make_slot(std::move(*last));
        slot->provider->restore(state);
        slot->records = n;
        if (id.rfind("s-", 0) == 0) {
            try {
                next_session_ = std::max<std::uint64_t>(next_session_, std::stoull(id.substr(2)) + 1);
            } catch (const std::exception&) {
            }
        }
    }
    spdlog::info("loaded {} sessions from {}", files.size(), dir.string());
}

StreamEvent Service::push_event(Session& s, std::string type, Json data) {
    StreamEvent e{s.events.size() + 1, std::move(type), std::move(data)};
    s.events.push_back(e);
    return e;
}

void Service::notify(Session& s, std::string kind, std::string text) {
    s.notifications.push_back({options_.clock->now(), std::move(kind), std::move(text)});
}

void Service::start_pipeline(const std::shared_ptr<Slot>& slot) {
    slot->pipeline = std::async(std::launch::async, [this, slot, dialogue = slot->s.dialogue] {
                         run_pipeline(*slot, dialogue);
                     }).share();
}

void Service::run_pipeline(Slot& slot, const DialogueState& dialogue) {
    try {
        const auto history = finish(dialogue);
        PipelineDeps deps{*options_.store, options_.embedder,          *slot.gateway,
                          options_.worklist.get(), options_.config.evolution(), *options_.clock};
        auto record = run_diagnosis(history, deps, options_.config.diagnosis());
        std::lock_guard lock(slot.mutex);
        slot.s.diagnosis = std::move(record);
        slot.s.diagnosis_error.reset();
        rebuild_default_layout(slot.s, *options_.store->snapshot());
        persist(slot, "diagnosis");
    } catch (const std::exception& e) {
        spdlog::error("diagnosis for session {} failed: {}", slot.s.id, e.what());
        std::lock_guard lock(slot.mutex);
        slot.s.diagnosis_error = e.what();
        persist(slot, "diagnosis_failed");
    }
}

void Service::ensure_diagnosis(const std::shared_ptr<Slot>& slot) {
    std::shared_future<void> pending;
    {
        std::lock_guard lock(slot->mutex);
        pending = slot->pipeline;
    }
    if (pending.valid()) pending.wait();
    DialogueState dialogue;
    {
        std::lock_guard lock(slot->mutex);
        if (slot->s.diagnosis || slot->s.status == SessionStatus::collecting) return;
        dialogue = slot->s.dialogue;
    }
    // Failed or interrupted before a restart: run again in the foreground.
    run_pipeline(*slot, dialogue);
    std::lock_guard lock(slot->mutex);
    if (!slot->s.diagnosis) {
        throw Error(ErrorCode::gateway, "diagnosis failed: " + slot->s.diagnosis_error.value_or("unknown error"), true);
    }
}

void Service::rebuild_default_layout(Session& s, const KnowledgeGraph& graph) const {
    if (!s.diagnosis) return;
    std::vector<std::string> ids;
    for (const auto& c : s.diagnosis->candidates) {
        if (graph.contains(c.disease_id)) ids.push_back(c.disease_id);
    }
    LayoutOptions opts;
    opts.k = options_.config.k;
    opts.width = options_.config.canvas_width;
    opts.height = options_.config.canvas_height;
    s.default_layout = global_layout(graph, ids, s.diagnosis->symptoms.linked, opts);
    s.active_layout = s.default_layout;
    s.active_diagnosis.reset();
}

Json Service::case_payload(const Session& s, const KnowledgeGraph& graph) const {
    Json messages = Json::array();
    for (const auto& m : s.dialogue.messages) messages.push_back(message_json(m));
    Json out = summary(s);
    out["history"] = history_export_to_json(finish(s.dialogue));
    out["dialogue"] = messages;
    out["diagnosis"] = s.diagnosis ? to_json(*s.diagnosis) : Json(nullptr);
    out["bars"] = s.diagnosis ? bars_json(*s.diagnosis) : Json::array();
    out["default_layout"] = s.default_layout ? layout_payload(*s.default_layout, graph) : Json(nullptr);
    out["layout"] = s.active_layout ? layout_payload(*s.active_layout, graph) : Json(nullptr);
    out["active_diagnosis"] = str_json(s.active_diagnosis);
    return out;
}

std::vector<std::string> Service::session_ids() const {
    std::lock_guard lock(sessions_mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
}

Session Service::session(const std::string& session_id) const {
    auto s = slot(session_id);
    std::lock_guard lock(s->mutex);
    return s->s;
}

void Service::wait_for_diagnosis(const std::string& session_id) {
    auto s = slot(session_id);
    std::shared_future<void> pending;
    {
        std::lock_guard lock(s->mutex);
        pending = s->pipeline;
    }
    if (pending.valid()) pending.wait();
}

// ---------------------------------------------------------------------------
// Patient

Json Service::create_session(const Caller& caller) {
    require_role(caller, Role::patient, "creating a session");
    std::string id;
    {
        std::lock_guard lock(sessions_mutex_);
        id = "s-" + std::to_string(next_session_++);
    }
    Session session;
    session.id = id;
    session.patient_id = caller.user;
    session.created_at = options_.clock->now();
    session.dialogue.config = options_.config.history();
    auto slot = make_slot(std::move(session));
    std::lock_guard lock(slot->mutex);
    try {
        slot->s.dialogue = start_session(options_.config.history(), *slot->gateway, *options_.clock);
    } catch (...) {
        std::lock_guard guard(sessions_mutex_);
        sessions_.erase(id);
        throw;
    }
    for (const auto& chunk : chunk_text(slot->s.dialogue.messages.back().text)) {
        push_event(slot->s, "prompt_delta", {{"text", chunk}});
    }
    persist(*slot, "created");
    return patient_view(slot->s);
}

std::vector<StreamEvent> Service::post_message(const Caller& caller, const std::string& session_id,
                                               const std::string& text) {
    require_role(caller, Role::patient, "posting a message");
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->s;
    if (s.status != SessionStatus::collecting) {
        throw Error(ErrorCode::conflict, "session " + s.id + " is no longer collecting history");
    }
    if (trim(text).empty()) throw Error(ErrorCode::invalid_argument, "message is empty");

    auto result = step(s.dialogue, text, *slot->gateway, *options_.clock);
    for (const auto& f : result.rejected_fields) spdlog::warn("session {}: dropped non-template field {}", s.id, f);
    s.dialogue = std::move(result.state);

    std::vector<StreamEvent> out;
    for (const auto& d : result.deltas) {
        out.push_back(push_event(s, "history_delta", {{"section", d.section}, {"slot", d.slot}, {"value", d.value}}));
    }
    for (const auto& chunk : chunk_text(result.prompt)) {
        out.push_back(push_event(s, "prompt_delta", {{"text", chunk}}));
    }
    const bool done = s.dialogue.stage == DialogueStage::Done;
    if (done) {
        s.status = SessionStatus::awaiting_physician;
        out.push_back(push_event(s, "status_change", {{"status", to_string(s.status)}}));
        notify(s, "status", "Your history has been passed to a physician.");
    }
    persist(*slot, "message");
    if (done) start_pipeline(slot);
    return out;
}

Json Service::get_history(const Caller& caller, const std::string& session_id) {
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    const auto& s = slot->s;
    Json out = {{"session_id", s.id},
                {"status", to_string(s.status)},
                {"history", history_to_json({s.dialogue.main_template, s.dialogue.other_template})}};
    if (caller.role == Role::physician) out["ddx"] = ddx_to_json(s.dialogue.ddx);
    return out;
}

Json Service::get_final_explanation(const Caller& caller, const std::string& session_id) {
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    const auto& s = slot->s;
    return {{"session_id", s.id},
            {"available", s.explanation.has_value()},
            {"text", str_json(s.explanation)},
            {"finalized_at", time_json(s.finalized_at)}};
}

Json Service::get_notifications(const Caller& caller, const std::string& session_id) {
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    Json out = Json::array();
    for (const auto& n : slot->s.notifications) {
        out.push_back({{"at", format_rfc3339(n.at)}, {"kind", n.kind}, {"text", n.text}});
    }
    return {{"session_id", session_id}, {"notifications", out}};
}

std::vector<StreamEvent> Service::events_since(const Caller& caller, const std::string& session_id,
                                               std::uint64_t after) {
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    std::vector<StreamEvent> out;
    for (const auto& e : slot->s.events) {
        if (e.id > after) out.push_back(e);
    }
    return out;
}

Json Service::get_session(const Caller& caller, const std::string& session_id) {
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    if (caller.role == Role::patient) return patient_view(slot->s);
    Json out = summary(slot->s);
    out["dialogue"] = to_json(slot->s.dialogue);
    return out;
}

Json Service::list_sessions(const Caller& caller) {
    if (caller.role == Role::expert) throw Error(ErrorCode::forbidden, "experts have no access to sessions");
    std::vector<std::shared_ptr<Slot>> slots;
    {
        std::lock_guard lock(sessions_mutex_);
        for (const auto& [id, s] : sessions_) slots.push_back(s);
    }
    Json out = Json::array();
    for (const auto& slot : slots) {
        std::lock_guard lock(slot->mutex);
        const auto& s = slot->s;
        if (caller.role == Role::patient) {
            if (s.patient_id != caller.user) continue;
            out.push_back({{"session_id", s.id}, {"status", to_string(s.status)},
                           {"created_at", format_rfc3339(s.created_at)}});
        } else {
            out.push_back(summary(s));
        }
    }
    return {{"sessions", out}};
}

// ---------------------------------------------------------------------------
// Physician

Json Service::open_case(const Caller& caller, const std::string& session_id) {
    require_role(caller, Role::physician, "opening a case");
    auto slot = own_slot(caller, session_id);
    {
        std::lock_guard lock(slot->mutex);
        const auto& s = slot->s;
        if (s.status == SessionStatus::collecting) {
            throw Error(ErrorCode::conflict, "session " + s.id + " is still collecting history");
        }
        if (s.assigned_physician && s.assigned_physician != caller.user) {
            throw Error(ErrorCode::conflict, "case " + s.id + " is assigned to another physician");
        }
    }
    ensure_diagnosis(slot);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->s;
    if (s.status == SessionStatus::awaiting_physician) {
        s.status = SessionStatus::in_review;
        s.assigned_physician = caller.user;
        s.handover_at = options_.clock->now();
        push_event(s, "status_change", {{"status", to_string(s.status)}});
        notify(s, "handover", "A physician has opened your case.");
        persist(*slot, "open_case");
    } else if (s.assigned_physician != caller.user) {
        throw Error(ErrorCode::conflict, "case " + s.id + " is assigned to another physician");
    }
    const auto snap = options_.store->snapshot();
    if (!s.default_layout) rebuild_default_layout(s, *snap);
    return case_payload(s, *snap);
}

Json Service::get_diagnosis(const Caller& caller, const std::string& session_id) {
    require_role(caller, Role::physician, "reading a diagnosis");
    auto slot = own_slot(caller, session_id);
    {
        std::lock_guard lock(slot->mutex);
        require_assigned(slot->s, caller);
    }
    ensure_diagnosis(slot);
    std::lock_guard lock(slot->mutex);
    return {{"session_id", session_id}, {"diagnosis", to_json(*slot->s.diagnosis)}, {"bars", bars_json(*slot->s.diagnosis)}};
}

Json Service::select_diagnosis(const Caller& caller, const std::string& session_id, const std::string& disease_id) {
    require_role(caller, Role::physician, "selecting a diagnosis");
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->s;
    require_assigned(s, caller);
    require_in_review(s);
    const auto& candidate = selected_candidate(s, disease_id);
    const auto history_text = case_history_text(s);

    if (!s.bundles.count(disease_id)) {
        auto bundle = build_bundle(*options_.store, disease_id, s.diagnosis->symptoms.linked);
        bundle = rank_evidence(std::move(bundle), history_text, *slot->gateway);
        s.bundles[disease_id] = categorize_evidence(std::move(bundle));
    }
    const auto snap = options_.store->snapshot();
    if (!s.reports.count(disease_id)) {
        s.reports[disease_id] =
            generate_report(history_text, s.bundles.at(disease_id), *snap, candidate.name, *slot->gateway);
    }
    if (!s.default_layout) rebuild_default_layout(s, *snap);
    s.active_layout = focus_layout(*s.default_layout, disease_id);
    s.active_diagnosis = disease_id;
    persist(*slot, "select");

    const auto& bundle = s.bundles.at(disease_id);
    const auto& report = s.reports.at(disease_id);
    return {{"session_id", s.id},
            {"disease_id", disease_id},
            {"evidence", to_json(bundle, snap.get())},
            {"layout", layout_payload(*s.active_layout, *snap)},
            {"report", to_json(report)},
            {"annotations", annotations(report, bundle, *snap)}};
}

Json Service::expand(const Caller& caller, const std::string& session_id, const std::string& entity_id) {
    require_role(caller, Role::physician, "expanding a node");
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->s;
    require_assigned(s, caller);
    const auto snap = options_.store->snapshot();
    if (!s.active_layout) rebuild_default_layout(s, *snap);
    if (!s.active_layout) throw Error(ErrorCode::invalid_state, "case " + s.id + " has no layout yet");
    s.active_layout = expand_node(*s.active_layout, entity_id, *snap);

    Json out = {{"session_id", s.id}, {"layout", layout_payload(*s.active_layout, *snap)}};
    if (s.active_diagnosis) {
        auto& bundle = s.bundles.at(*s.active_diagnosis);
        const auto* e = snap->find(entity_id);
        if (e && e->kind == EntityKind::drug && bundle.entity_ids().count(entity_id)) {
            expand_drug(bundle, *snap, entity_id);
        }
        out["evidence"] = to_json(bundle, snap.get());
    }
    persist(*slot, "expand");
    return out;
}

Json Service::edit_report(const Caller& caller, const std::string& session_id, const std::string& disease_id,
                          const Json& edit) {
    require_role(caller, Role::physician, "editing a report");
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->s;
    require_assigned(s, caller);
    require_in_review(s);
    auto it = s.reports.find(disease_id);
    if (it == s.reports.end()) throw Error(ErrorCode::not_found, "no report for '" + disease_id + "'");
    if (!edit.is_object()) throw Error(ErrorCode::invalid_argument, "edit must be an object");
    ReportEdit e;
    e.target = string_field(edit, "target");
    e.op = string_field(edit, "op");
    e.index = edit.value("index", std::size_t{0});
    e.text = string_field(edit, "text");
    e.actor = caller.user;
    e.at = options_.clock->now();
    apply_report_edit(it->second, std::move(e));
    persist(*slot, "edit_report");
    const auto snap = options_.store->snapshot();
    return {{"session_id", s.id},
            {"disease_id", disease_id},
            {"report", to_json(it->second)},
            {"annotations", annotations(it->second, s.bundles.at(disease_id), *snap)}};
}

Json Service::continue_conversation(const Caller& caller, const std::string& session_id, const std::string& text) {
    require_role(caller, Role::physician, "continuing the conversation");
    auto slot = own_slot(caller, session_id);
    {
        std::lock_guard lock(slot->mutex);
        require_assigned(slot->s, caller);
        require_in_review(slot->s);
    }
    if (trim(text).empty()) throw Error(ErrorCode::invalid_argument, "message is empty");
    ensure_diagnosis(slot);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->s;
    auto dialogue = s.dialogue;
    dialogue.messages.push_back({"physician", trim(text), options_.clock->now()});
    Session probe = s;
    probe.dialogue = dialogue;
    PipelineDeps deps{*options_.store, options_.embedder,          *slot->gateway,
                      options_.worklist.get(), options_.config.evolution(), *options_.clock};
    auto record = rerank_diagnosis(case_history_text(probe), *s.diagnosis, deps, options_.config.diagnosis());
    s.dialogue = std::move(dialogue);
    s.diagnosis = std::move(record);
    // Evidence and reports were written against the old ranking.
    s.bundles.clear();
    s.reports.clear();
    const auto snap = options_.store->snapshot();
    rebuild_default_layout(s, *snap);
    persist(*slot, "continue");
    return case_payload(s, *snap);
}

Json Service::finalize(const Caller& caller, const std::string& session_id, const Json& body) {
    require_role(caller, Role::physician, "finalizing a report");
    auto slot = own_slot(caller, session_id);
    std::lock_guard lock(slot->mutex);
    auto& s = slot->s;
    require_assigned(s, caller);
    require_in_review(s);
    if (!body.is_object()) throw Error(ErrorCode::invalid_argument, "finalize body must be an object");
    auto disease_id = string_field(body, "disease_id");
    if (disease_id.empty() && s.active_diagnosis) disease_id = *s.active_diagnosis;
    if (disease_id.empty()) throw ValidationError("missing required fields: disease_id", {"disease_id"});
    auto it = s.reports.find(disease_id);
    if (it == s.reports.end()) {
        throw Error(ErrorCode::invalid_state, "select '" + disease_id + "' before finalizing");
    }
    FinalizeFields fields{string_field(body, "conclusion"), string_field(body, "plan"), string_field(body, "follow_up"),
                          string_field(body, "precautions")};
    const auto now = options_.clock->now();
    const auto text = finalize_report(it->second, fields, *slot->gateway, caller.user, now);

    s.status = SessionStatus::completed;
    s.finalized_by = caller.user;
    s.finalized_at = now;
    s.explanation = text;
    push_event(s, "final_explanation", {{"text", text}});
    push_event(s, "status_change", {{"status", to_string(s.status)}});
    notify(s, "explanation", "Your physician's explanation is available.");
    persist(*slot, "finalize");
    return {{"session_id", s.id},
            {"status", to_string(s.status)},
            {"disease_id", disease_id},
            {"patient_text", text},
            {"finalized_at", format_rfc3339(now)},
            {"report", to_json(it->second)}};
}

// ---------------------------------------------------------------------------
// Expert

Json Service::get_worklist(const Caller& caller, bool include_closed) {
    require_role(caller, Role::expert, "reading the worklist");
    Json out = Json::array();
    for (const auto& e : include_closed ? options_.worklist->list() : options_.worklist->active()) {
        out.push_back(to_json(e));
    }
    return {{"events", out}};
}

Json Service::get_event(const Caller& caller, const std::string& event_id) {
    require_role(caller, Role::expert, "reading an evolution event");
    return to_json(options_.worklist->get(event_id));
}

Json Service::draft_event(const Caller& caller, const std::string& event_id, std::optional<std::uint64_t> version) {
    require_role(caller, Role::expert, "drafting");
    const auto snap = options_.store->snapshot();
    return to_json(options_.worklist->draft(event_id, *snap, *expert_gateway_, *options_.embedder,
                                            options_.config.evolution(), version));
}

Json Service::post_edit(const Caller& caller, const std::string& event_id, const Json& action,
                        std::optional<std::uint64_t> version) {
    require_role(caller, Role::expert, "editing a draft");
    if (!action.is_object() || !action.contains("kind") || !action["kind"].is_string()) {
        throw Error(ErrorCode::invalid_argument, "edit needs a string 'kind'");
    }
    EditAction a;
    a.kind = edit_kind_from_string(action["kind"].get<std::string>());
    a.payload = action.value("payload", Json::object());
    a.actor = caller.user;
    a.at = options_.clock->now();
    const auto snap = options_.store->snapshot();
    return to_json(options_.worklist->edit(event_id, std::move(a), *snap, version));
}

Json Service::approve(const Caller& caller, const std::string& event_id, std::optional<std::uint64_t> version) {
    require_role(caller, Role::expert, "approving");
    const auto diff = options_.worklist->approve(event_id, *options_.store, *options_.embedder,
                                                 options_.config.evolution(), caller.user, options_.clock->now(),
                                                 version);
    return {{"event", to_json(options_.worklist->get(event_id))}, {"diff", to_json(diff)}};
}

Json Service::reject(const Caller& caller, const std::string& event_id, std::optional<std::uint64_t> version) {
    require_role(caller, Role::expert, "rejecting");
    return to_json(options_.worklist->reject(event_id, caller.user, options_.clock->now(), version));
}

Json Service::get_diff(const Caller& caller, const std::string& event_id) {
    require_role(caller, Role::expert, "reading a diff");
    return to_json(options_.worklist->diff(event_id));
}

Json Service::kg_triples(const Caller& caller, const std::optional<std::string>& entity_id) {
    if (caller.role == Role::patient) throw Error(ErrorCode::forbidden, "patients have no access to the graph");
    const auto snap = options_.store->snapshot();
    Json out = Json::array();
    if (entity_id) {
        if (!snap->contains(*entity_id)) throw Error(ErrorCode::not_found, "no entity '" + *entity_id + "'");
        for (const auto* t : snap->incident_triples(*entity_id)) out.push_back(triple_to_json(*t));
    } else {
        for (const auto& t : snap->triples()) out.push_back(triple_to_json(t));
    }
    return {{"kg_version", options_.store->version()}, {"triples", out}};
}

Json Service::kg_entity(const Caller& caller, const std::string& entity_id) {
    if (caller.role == Role::patient) throw Error(ErrorCode::forbidden, "patients have no access to the graph");
    const auto snap = options_.store->snapshot();
    auto j = entity_to_json(snap->entity(entity_id));
    j.erase("embedding");
    Json triples = Json::array();
    for (const auto* t : snap->incident_triples(entity_id)) triples.push_back(triple_to_json(*t));
    j["triples"] = triples;
    return j;
}

} // namespace kgdx
