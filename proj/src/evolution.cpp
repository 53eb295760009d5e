#include "kgdx/evolution.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <set>

namespace kgdx {

bool is_controlled_relation(std::string_view relation) {
    return relation == rel::has_symptom || relation == rel::red_flag_symptom ||
           relation == rel::has_definition || relation == rel::treats ||
           relation == rel::second_line_treats || relation == rel::typical_course_note;
}

std::string_view to_string(TriggerKind t) {
    switch (t) {
        case TriggerKind::absent: return "absent";
        case TriggerKind::unused: return "unused";
        case TriggerKind::stale: return "stale";
    }
    return "absent";
}

std::string_view to_string(EventStatus s) {
    switch (s) {
        case EventStatus::pending: return "pending";
        case EventStatus::drafted: return "drafted";
        case EventStatus::under_review: return "under_review";
        case EventStatus::approved: return "approved";
        case EventStatus::merged: return "merged";
        case EventStatus::rejected: return "rejected";
    }
    return "pending";
}

std::string_view to_string(EditKind k) {
    switch (k) {
        case EditKind::add_triple: return "add_triple";
        case EditKind::delete_triple: return "delete_triple";
        case EditKind::relabel_relation: return "relabel_relation";
        case EditKind::edit_text: return "edit_text";
        case EditKind::rebalance_note: return "rebalance_note";
    }
    return "rebalance_note";
}

namespace {

template <typename E, std::size_t N>
E enum_from(std::string_view text, const std::array<E, N>& values, const char* what) {
    for (auto v : values) {
        if (to_string(v) == text) return v;
    }
    throw Error(ErrorCode::invalid_argument, std::string("unknown ") + what + " '" + std::string(text) + "'");
}

} // namespace

TriggerKind trigger_kind_from_string(std::string_view text) {
    return enum_from(text, std::array{TriggerKind::absent, TriggerKind::unused, TriggerKind::stale},
                     "trigger");
}

EventStatus event_status_from_string(std::string_view text) {
    return enum_from(text,
                     std::array{EventStatus::pending, EventStatus::drafted, EventStatus::under_review,
                                EventStatus::approved, EventStatus::merged, EventStatus::rejected},
                     "event status");
}

EditKind edit_kind_from_string(std::string_view text) {
    return enum_from(text,
                     std::array{EditKind::add_triple, EditKind::delete_triple, EditKind::relabel_relation,
                                EditKind::edit_text, EditKind::rebalance_note},
                     "edit kind");
}

bool is_terminal(EventStatus s) { return s == EventStatus::merged || s == EventStatus::rejected; }

bool can_transition(EventStatus from, EventStatus to) {
    if (is_terminal(from)) return false;
    if (to == EventStatus::rejected) return true;
    if (from == EventStatus::under_review && to == EventStatus::under_review) return true;
    return static_cast<int>(to) > static_cast<int>(from);
}

void validate(const EvolutionConfig& config) {
    if (!(config.epsilon_t >= 0.0 && config.epsilon_t <= 1.0)) {
        throw Error(ErrorCode::invalid_argument, "epsilon_t must lie in [0,1]");
    }
    if (config.staleness_threshold.count() <= 0) {
        throw Error(ErrorCode::invalid_argument, "staleness threshold must be positive");
    }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

Json triples_json(const std::vector<Triple>& ts) {
    Json a = Json::array();
    for (const auto& t : ts) a.push_back(triple_to_json(t));
    return a;
}

std::vector<Triple> triples_from(const Json& a) {
    std::vector<Triple> out;
    for (const auto& t : a) out.push_back(triple_from_json(t));
    return out;
}

Json key_json(const TripleKey& k) {
    return {{"subject", k.subject}, {"relation", k.relation}, {"object", k.object}};
}

TripleKey key_from(const Json& j) {
    auto field = [&](const char* name) {
        auto it = j.find(name);
        if (it == j.end() || !it->is_string() || it->get<std::string>().empty()) {
            throw Error(ErrorCode::invalid_argument, std::string("edit payload lacks '") + name + "'");
        }
        return it->get<std::string>();
    };
    return {field("subject"), field("relation"), field("object")};
}

} // namespace

Json to_json(const DedupReport& r) {
    Json near = Json::array();
    for (const auto& n : r.near_removed) {
        near.push_back({{"triple", triple_to_json(n.triple)},
                        {"matched_existing", key_json(n.matched_existing)},
                        {"similarity", n.similarity}});
    }
    return {{"exact_removed", r.exact_removed}, {"near_removed", near}};
}

namespace {

DedupReport dedup_from(const Json& j) {
    DedupReport r;
    r.exact_removed = j.at("exact_removed").get<int>();
    for (const auto& n : j.at("near_removed")) {
        r.near_removed.push_back({triple_from_json(n.at("triple")), key_from(n.at("matched_existing")),
                                  n.at("similarity").get<double>()});
    }
    return r;
}

EvolutionDiff diff_from(const Json& j) {
    EvolutionDiff d;
    for (const auto& e : j.at("added_entities")) d.added_entities.push_back(entity_from_json(e));
    d.added_triples = triples_from(j.at("added_triples"));
    for (const auto& r : j.at("removed_draft_triples")) {
        d.removed_draft_triples.push_back({triple_from_json(r), r.value("reason", "")});
    }
    return d;
}

} // namespace

Json to_json(const EvolutionDiff& d) {
    Json entities = Json::array();
    for (const auto& e : d.added_entities) entities.push_back(entity_to_json(e));
    Json removed = Json::array();
    for (const auto& r : d.removed_draft_triples) {
        auto t = triple_to_json(r.triple);
        t["reason"] = r.reason;
        removed.push_back(std::move(t));
    }
    return {{"added_entities", entities}, {"added_triples", triples_json(d.added_triples)},
            {"removed_draft_triples", removed}};
}

Json to_json(const EvolutionEvent& e) {
    Json edits = Json::array();
    for (const auto& a : e.expert_edits) {
        edits.push_back({{"kind", to_string(a.kind)},
                         {"payload", a.payload},
                         {"actor", a.actor},
                         {"timestamp", format_rfc3339(a.at)}});
    }
    Json staged = Json::array();
    for (const auto& s : e.staged_entities) staged.push_back(entity_to_json(s));
    Json j = {{"id", e.id},
              {"disease_name", e.disease_name},
              {"disease_id", e.disease_id ? Json(*e.disease_id) : Json(nullptr)},
              {"trigger", to_string(e.trigger)},
              {"status", to_string(e.status)},
              {"draft_text", e.draft_text ? Json(*e.draft_text) : Json(nullptr)},
              {"draft_triples", e.draft_triples ? triples_json(*e.draft_triples) : Json(nullptr)},
              {"staged_entities", staged},
              {"dedup_report", e.dedup_report ? to_json(*e.dedup_report) : Json(nullptr)},
              {"expert_edits", edits},
              {"merged_diff", e.merged_diff ? to_json(*e.merged_diff) : Json(nullptr)},
              {"diagnostics", e.diagnostics},
              {"version", e.version},
              {"created_at", format_rfc3339(e.created_at)}};
    return j;
}

EvolutionEvent evolution_event_from_json(const Json& j) {
    EvolutionEvent e;
    e.id = j.at("id").get<std::string>();
    e.disease_name = j.at("disease_name").get<std::string>();
    e.disease_id = optional_field<std::string>(j, "disease_id");
    e.trigger = trigger_kind_from_string(j.at("trigger").get<std::string>());
    e.status = event_status_from_string(j.at("status").get<std::string>());
    e.draft_text = optional_field<std::string>(j, "draft_text");
    if (j.contains("draft_triples") && !j["draft_triples"].is_null()) e.draft_triples = triples_from(j["draft_triples"]);
    for (const auto& s : j.value("staged_entities", Json::array())) e.staged_entities.push_back(entity_from_json(s));
    if (j.contains("dedup_report") && !j["dedup_report"].is_null()) e.dedup_report = dedup_from(j["dedup_report"]);
    for (const auto& a : j.value("expert_edits", Json::array())) {
        e.expert_edits.push_back({edit_kind_from_string(a.at("kind").get<std::string>()), a.at("payload"),
                                  a.at("actor").get<std::string>(),
                                  parse_rfc3339(a.at("timestamp").get<std::string>())});
    }
    if (j.contains("merged_diff") && !j["merged_diff"].is_null()) e.merged_diff = diff_from(j["merged_diff"]);
    e.diagnostics = j.value("diagnostics", std::vector<std::string>{});
    e.version = j.value("version", std::uint64_t{0});
    e.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
    return e;
}

// ---------------------------------------------------------------------------
// Triggers

namespace {

const Entity* resolve_disease(const KnowledgeGraph& graph, const DiseaseRef& ref) {
    if (ref.id) {
        if (const auto* e = graph.find(*ref.id)) return e;
    }
    const auto* e = graph.find_by_name(ref.name);
    return e && e->kind == EntityKind::disease ? e : nullptr;
}

bool same_disease(const EvolutionEvent& e, const std::optional<std::string>& id, const std::string& name) {
    if (id && e.disease_id && *e.disease_id == *id) return true;
    return normalize_text(e.disease_name) == normalize_text(name);
}

} // namespace

std::vector<EvolutionEvent> detect_triggers(const KnowledgeGraph& graph, const std::vector<DiseaseRef>& diseases,
                                            const EvolutionConfig& config, Timestamp now,
                                            const std::vector<EvolutionEvent>& existing) {
    std::vector<EvolutionEvent> out;
    auto already = [&](const std::optional<std::string>& id, const std::string& name) {
        auto open_in = [&](const std::vector<EvolutionEvent>& list) {
            return std::any_of(list.begin(), list.end(), [&](const EvolutionEvent& e) {
                return !is_terminal(e.status) && same_disease(e, id, name);
            });
        };
        return open_in(existing) || open_in(out);
    };

    for (const auto& ref : diseases) {
        const Entity* entity = resolve_disease(graph, ref);
        const auto id = entity ? std::optional<std::string>(entity->id) : std::nullopt;
        const auto name = entity ? entity->name : trim(ref.name);
        if (name.empty() || already(id, name)) continue;

        EvolutionEvent event;
        event.disease_name = name;
        event.disease_id = id;
        event.created_at = now;
        if (!entity) {
            event.trigger = TriggerKind::absent;
            out.push_back(std::move(event));
            continue;
        }

        const auto incident = graph.incident_triples(entity->id);
        const bool evolved_recently =
            entity->last_evolution && now - *entity->last_evolution <= config.staleness_threshold;
        const bool never_used = std::all_of(incident.begin(), incident.end(),
                                            [](const Triple* t) { return t->usage_count == 0; });

        std::optional<Timestamp> baseline = entity->last_evolution;
        if (!baseline) {
            for (const auto* t : incident) {
                if (t->provenance.reviewed_at && (!baseline || *t->provenance.reviewed_at > *baseline)) {
                    baseline = t->provenance.reviewed_at;
                }
            }
        }
        const bool stale = baseline && now - *baseline > config.staleness_threshold;

        if (never_used && !evolved_recently) {
            event.trigger = TriggerKind::unused;
        } else if (stale) {
            event.trigger = TriggerKind::stale;
        } else {
            continue;
        }
        out.push_back(std::move(event));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Redundancy

std::string triple_text(const Triple& t, const KnowledgeGraph& graph, const std::vector<Entity>& staged) {
    auto name = [&](const std::string& id) -> std::string {
        if (const auto* e = graph.find(id)) return e->name;
        for (const auto& s : staged) {
            if (s.id == id) return s.name;
        }
        return id;
    };
    return name(t.subject) + " " + t.relation + " " + name(t.object);
}

RedundancyResult check_redundancy(const std::vector<Triple>& draft, const std::vector<Entity>& staged,
                                  const KnowledgeGraph& graph, const EmbeddingProvider& provider,
                                  const EvolutionConfig& config) {
    validate(config);
    RedundancyResult result;

    std::vector<Triple> remaining;
    std::set<TripleKey> seen;
    for (const auto& t : draft) {
        if (graph.contains(t.key()) || !seen.insert(t.key()).second) {
            ++result.report.exact_removed;
        } else {
            remaining.push_back(t);
        }
    }
    if (remaining.empty()) return result;

    const auto& existing = graph.triples();
    std::vector<std::string> texts;
    texts.reserve(existing.size() + remaining.size());
    for (const auto& t : existing) texts.push_back(triple_text(t, graph, staged));
    for (const auto& t : remaining) texts.push_back(triple_text(t, graph, staged));
    const auto vectors = provider.embed_batch(texts);

    for (std::size_t i = 0; i < remaining.size(); ++i) {
        const auto& v = vectors[existing.size() + i];
        double best = -1.0;
        std::size_t best_idx = 0;
        for (std::size_t j = 0; j < existing.size(); ++j) {
            const double s = cosine_similarity(v, vectors[j]);
            if (s > best) {
                best = s;
                best_idx = j;
            }
        }
        if (!existing.empty() && best >= config.epsilon_t) {
            result.report.near_removed.push_back({remaining[i], existing[best_idx].key(), best});
        } else {
            result.survivors.push_back(remaining[i]);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Drafting and editing

namespace {

std::string display_heading(std::string_view normalized) {
    static const std::map<std::string_view, std::string_view> names = {
        {"definition", "Definition"},
        {"core symptoms", "Core symptoms"},
        {"red flag symptoms", "Red-flag symptoms"},
        {"typical course", "Typical course"},
        {"first line treatments", "First-line treatments"},
        {"second line treatments", "Second-line treatments"},
    };
    return std::string(names.at(normalized));
}

std::string canonical_relation(const std::string& raw) {
    std::string r;
    for (char c : normalize_text(raw)) r += c == ' ' ? '_' : c;
    if (r == "first_line_treats" || r == "first_line_treatment") return std::string(rel::treats);
    if (r == "second_line_treatment") return std::string(rel::second_line_treats);
    if (r == "red_flag" || r == "has_red_flag_symptom") return std::string(rel::red_flag_symptom);
    return r;
}

bool treatment_relation(std::string_view r) { return r == rel::treats || r == rel::second_line_treats; }

EntityKind inferred_kind(std::string_view relation, bool is_subject) {
    if (treatment_relation(relation)) return is_subject ? EntityKind::drug : EntityKind::disease;
    if (is_subject) return EntityKind::disease;
    if (relation == rel::has_symptom || relation == rel::red_flag_symptom) return EntityKind::symptom;
    if (relation == rel::has_definition) return EntityKind::definition;
    return EntityKind::other;
}

struct Resolver {
    const KnowledgeGraph& graph;
    EvolutionEvent& event;
    const std::function<std::string()>& new_id;

    const std::string& disease_id() {
        if (event.disease_id) return *event.disease_id;
        for (const auto& s : event.staged_entities) {
            if (s.kind == EntityKind::disease && normalize_text(s.name) == normalize_text(event.disease_name)) {
                return s.id;
            }
        }
        Entity disease;
        disease.id = new_id();
        disease.name = event.disease_name;
        disease.kind = EntityKind::disease;
        event.staged_entities.push_back(std::move(disease));
        return event.staged_entities.back().id;
    }

    bool is_disease(const std::string& name) {
        return normalize_text(name) == normalize_text(event.disease_name);
    }

    std::string resolve(const std::string& name, EntityKind kind) {
        if (is_disease(name)) return disease_id();
        if (const auto* e = graph.find_by_name(name)) return e->id;
        for (const auto& s : event.staged_entities) {
            if (normalize_text(s.name) == normalize_text(name)) return s.id;
        }
        Entity e;
        e.id = new_id();
        e.name = name;
        e.kind = kind;
        if (kind == EntityKind::definition || kind == EntityKind::other) e.definition_text = name;
        event.staged_entities.push_back(std::move(e));
        return event.staged_entities.back().id;
    }
};

bool endpoint_exists(const KnowledgeGraph& graph, const EvolutionEvent& e, const std::string& id) {
    if (graph.contains(id)) return true;
    return std::any_of(e.staged_entities.begin(), e.staged_entities.end(),
                       [&](const Entity& s) { return s.id == id; });
}

std::vector<Triple>::iterator find_draft(std::vector<Triple>& draft, const TripleKey& key) {
    return std::find_if(draft.begin(), draft.end(), [&](const Triple& t) { return t.key() == key; });
}

} // namespace

EvolutionEvent draft_subgraph(EvolutionEvent event, const KnowledgeGraph& graph, Gateway& gateway,
                              const std::function<std::string()>& new_entity_id) {
    if (event.status != EventStatus::pending) {
        throw Error(ErrorCode::invalid_state, "event " + event.id + " is " + std::string(to_string(event.status)) +
                                                  "; only pending events can be drafted");
    }

    std::string neighbors;
    if (event.disease_id && graph.contains(*event.disease_id)) {
        for (const auto& n : graph.one_hop_neighbors(*event.disease_id)) {
            neighbors += n.triple.relation + " | " + n.entity.name + " (" + std::string(to_string(n.entity.kind)) + ")\n";
        }
    }
    if (neighbors.empty()) neighbors = "(none)\n";

    const auto sections = gateway.call(TemplateId::draft_disease,
                                       {{"disease_name", event.disease_name}, {"neighbors", neighbors}});
    std::vector<std::string> missing;
    for (auto heading : kDraftHeadings) {
        auto it = sections.find(std::string(heading));
        if (it == sections.end() || it->get<std::string>().empty()) missing.push_back(std::string(heading));
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw ValidationError("draft for '" + event.disease_name + "' lacks mandated headings: " + list, missing);
    }

    std::string text;
    for (auto heading : kDraftHeadings) {
        text += "## " + display_heading(heading) + "\n" + sections[std::string(heading)].get<std::string>() + "\n\n";
    }
    text = trim(text) + "\n";

    std::string relations;
    for (auto r : {rel::has_symptom, rel::red_flag_symptom, rel::has_definition, rel::treats,
                   rel::second_line_treats, rel::typical_course_note}) {
        relations += (relations.empty() ? "" : ", ") + std::string(r);
    }
    const auto rows = gateway.call(TemplateId::extract_triples, {{"disease_name", event.disease_name},
                                                                 {"draft_text", text},
                                                                 {"relations", relations}});

    Resolver resolver{graph, event, new_entity_id};
    std::vector<Triple> triples;
    std::set<TripleKey> seen;
    for (const auto& row : rows) {
        const auto relation = canonical_relation(row[1].get<std::string>());
        if (!is_controlled_relation(relation)) {
            event.diagnostics.push_back("dropped triple with relation '" + row[1].get<std::string>() +
                                        "' outside the controlled vocabulary");
            continue;
        }
        auto subject = row[0].get<std::string>();
        auto object = row[2].get<std::string>();
        // Orient so that treatments point at the disease and everything else
        // leaves it.
        const bool subject_is_disease = resolver.is_disease(subject);
        const bool object_is_disease = resolver.is_disease(object);
        if (treatment_relation(relation) ? (subject_is_disease && !object_is_disease)
                                         : (object_is_disease && !subject_is_disease)) {
            std::swap(subject, object);
        }
        Triple t;
        t.subject = resolver.resolve(subject, inferred_kind(relation, true));
        t.relation = relation;
        t.object = resolver.resolve(object, inferred_kind(relation, false));
        t.provenance.source = ProvenanceSource::llm_draft;
        if (t.subject == t.object || !seen.insert(t.key()).second) continue;
        triples.push_back(std::move(t));
    }
    // The disease itself is always staged so its evolution time can be set.
    if (!event.disease_id) resolver.disease_id();

    event.draft_text = text;
    event.draft_triples = std::move(triples);
    event.status = EventStatus::drafted;
    return event;
}

EvolutionEvent apply_expert_edit(EvolutionEvent event, const EditAction& action, const KnowledgeGraph& graph,
                                 const std::function<std::string()>& new_entity_id) {
    if (event.status != EventStatus::drafted && event.status != EventStatus::under_review) {
        throw Error(ErrorCode::invalid_state, "event " + event.id + " is " + std::string(to_string(event.status)) +
                                                  "; edits need a drafted event");
    }
    if (action.actor.empty()) throw Error(ErrorCode::invalid_argument, "edit has no actor");
    auto& draft = *event.draft_triples;
    EditAction logged = action;

    switch (action.kind) {
        case EditKind::add_triple: {
            for (const auto& spec : action.payload.value("new_entities", Json::array())) {
                Entity e;
                e.id = spec.contains("id") ? spec["id"].get<std::string>() : new_entity_id();
                e.name = spec.at("name").get<std::string>();
                e.kind = entity_kind_from_string(spec.at("kind").get<std::string>());
                if (endpoint_exists(graph, event, e.id)) {
                    throw Error(ErrorCode::conflict, "entity id '" + e.id + "' already exists");
                }
                event.staged_entities.push_back(e);
                logged.payload["staged_ids"].push_back(e.id);
            }
            // Staged ids may be referenced by name for convenience.
            auto resolve = [&](const std::string& ref) {
                if (endpoint_exists(graph, event, ref)) return ref;
                for (const auto& s : event.staged_entities) {
                    if (normalize_text(s.name) == normalize_text(ref)) return s.id;
                }
                throw Error(ErrorCode::not_found, "edit references unknown entity '" + ref + "'");
            };
            auto key = key_from(action.payload);
            key.relation = canonical_relation(key.relation);
            if (!is_controlled_relation(key.relation)) {
                throw Error(ErrorCode::invalid_argument, "relation '" + key.relation + "' is not in the vocabulary");
            }
            key.subject = resolve(key.subject);
            key.object = resolve(key.object);
            if (find_draft(draft, key) != draft.end()) {
                throw Error(ErrorCode::conflict, "triple " + key.str() + " is already in the draft");
            }
            Triple t{key.subject, key.relation, key.object, {ProvenanceSource::expert_edit, {}, {}}, 0, {}};
            draft.push_back(t);
            logged.payload["added"] = triple_to_json(t);
            break;
        }
        case EditKind::delete_triple: {
            const auto key = key_from(action.payload);
            auto it = find_draft(draft, key);
            if (it == draft.end()) {
                throw Error(ErrorCode::not_found, "edit references nonexistent draft triple " + key.str());
            }
            logged.payload["removed"] = triple_to_json(*it);
            draft.erase(it);
            break;
        }
        case EditKind::relabel_relation: {
            const auto key = key_from(action.payload);
            auto it = find_draft(draft, key);
            if (it == draft.end()) {
                throw Error(ErrorCode::not_found, "edit references nonexistent draft triple " + key.str());
            }
            const auto next = canonical_relation(action.payload.value("new_relation", ""));
            if (!is_controlled_relation(next)) {
                throw Error(ErrorCode::invalid_argument, "relation '" + next + "' is not in the vocabulary");
            }
            if (find_draft(draft, {key.subject, next, key.object}) != draft.end()) {
                throw Error(ErrorCode::conflict, "relabel would duplicate an existing draft triple");
            }
            it->relation = next;
            it->provenance.source = ProvenanceSource::expert_edit;
            break;
        }
        case EditKind::edit_text: {
            auto text = action.payload.find("text");
            if (text == action.payload.end() || !text->is_string()) {
                throw Error(ErrorCode::invalid_argument, "edit_text needs a 'text' string");
            }
            event.draft_text = text->get<std::string>();
            break;
        }
        case EditKind::rebalance_note: {
            auto note = action.payload.find("note");
            if (note == action.payload.end() || !note->is_string()) {
                throw Error(ErrorCode::invalid_argument, "rebalance_note needs a 'note' string");
            }
            break;
        }
    }
    event.expert_edits.push_back(std::move(logged));
    event.status = EventStatus::under_review;
    return event;
}

// ---------------------------------------------------------------------------
// Worklist

std::unique_ptr<Worklist> Worklist::open(const std::filesystem::path& file) {
    auto list = std::make_unique<Worklist>();
    list->file_ = file;
    std::ifstream in(file);
    if (!in) return list;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        EvolutionEvent e;
        try {
            e = evolution_event_from_json(Json::parse(line));
        } catch (const std::exception& ex) {
            throw Error(ErrorCode::io, file.string() + " record " + std::to_string(n) + ": " + ex.what());
        }
        if (e.id.rfind("ev-", 0) == 0) {
            list->next_event_ = std::max(list->next_event_, static_cast<std::uint64_t>(std::stoull(e.id.substr(3))) + 1);
        }
        for (const auto& s : e.staged_entities) {
            if (s.id.rfind("evo-", 0) == 0) {
                list->next_entity_ = std::max(list->next_entity_, static_cast<std::uint64_t>(std::stoull(s.id.substr(4))) + 1);
            }
        }
        list->events_[e.id] = std::move(e);
    }
    return list;
}

void Worklist::commit(EvolutionEvent& e) {
    ++e.version;
    if (!file_) return;
    if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
    std::ofstream out(*file_, std::ios::app);
    out << to_json(e).dump() << '\n';
    if (!out) throw Error(ErrorCode::io, "cannot append to " + file_->string());
}

std::string Worklist::next_entity_id(const KnowledgeGraph& graph, const std::vector<Entity>& staged) {
    while (true) {
        auto id = "evo-" + std::to_string(next_entity_++);
        const bool taken = graph.contains(id) || std::any_of(staged.begin(), staged.end(),
                                                             [&](const Entity& s) { return s.id == id; });
        if (!taken) return id;
    }
}

EvolutionEvent& Worklist::locate(const std::string& id, std::optional<std::uint64_t> expected_version) {
    auto it = events_.find(id);
    if (it == events_.end()) throw Error(ErrorCode::not_found, "no evolution event '" + id + "'");
    if (expected_version && *expected_version != it->second.version) {
        throw Error(ErrorCode::conflict, "event " + id + " changed (version " + std::to_string(it->second.version) +
                                             ", expected " + std::to_string(*expected_version) + ")");
    }
    return it->second;
}

std::vector<EvolutionEvent> Worklist::detect(const KnowledgeGraph& graph, const std::vector<DiseaseRef>& diseases,
                                             const EvolutionConfig& config, Timestamp now) {
    std::lock_guard lock(mutex_);
    std::vector<EvolutionEvent> existing;
    for (const auto& [_, e] : events_) existing.push_back(e);
    auto fresh = detect_triggers(graph, diseases, config, now, existing);
    for (auto& e : fresh) {
        e.id = "ev-" + std::to_string(next_event_++);
        commit(e);
        spdlog::info("evolution event {} ({}) for '{}'", e.id, to_string(e.trigger), e.disease_name);
        events_[e.id] = e;
    }
    return fresh;
}

std::vector<EvolutionEvent> Worklist::list() const {
    std::lock_guard lock(mutex_);
    std::vector<EvolutionEvent> out;
    for (const auto& [_, e] : events_) out.push_back(e);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        auto num = [](const std::string& id) { return id.rfind("ev-", 0) == 0 ? std::stoull(id.substr(3)) : 0ULL; };
        return std::pair(num(a.id), a.id) < std::pair(num(b.id), b.id);
    });
    return out;
}

std::vector<EvolutionEvent> Worklist::active() const {
    auto all = list();
    std::erase_if(all, [](const EvolutionEvent& e) { return is_terminal(e.status); });
    return all;
}

EvolutionEvent Worklist::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = events_.find(id);
    if (it == events_.end()) throw Error(ErrorCode::not_found, "no evolution event '" + id + "'");
    return it->second;
}

EvolutionEvent Worklist::draft(const std::string& id, const KnowledgeGraph& graph, Gateway& gateway,
                               const EmbeddingProvider& provider, const EvolutionConfig& config,
                               std::optional<std::uint64_t> expected_version) {
    EvolutionEvent base;
    {
        std::lock_guard lock(mutex_);
        base = locate(id, expected_version);
    }
    // Gateway calls run unlocked; the version check below catches races.
    auto new_id = [&] {
        std::lock_guard lock(mutex_);
        return next_entity_id(graph, base.staged_entities);
    };
    EvolutionEvent drafted;
    try {
        drafted = draft_subgraph(base, graph, gateway, new_id);
    } catch (const ValidationError& e) {
        std::lock_guard lock(mutex_);
        auto& current = locate(id, base.version);
        current.diagnostics.push_back(e.what());
        commit(current);
        throw;
    }
    drafted.dedup_report = check_redundancy(*drafted.draft_triples, drafted.staged_entities, graph, provider, config).report;

    std::lock_guard lock(mutex_);
    auto& current = locate(id, base.version);
    current = std::move(drafted);
    commit(current);
    return current;
}

EvolutionEvent Worklist::edit(const std::string& id, EditAction action, const KnowledgeGraph& graph,
                              std::optional<std::uint64_t> expected_version) {
    std::lock_guard lock(mutex_);
    auto& current = locate(id, expected_version);
    auto new_id = [&] { return next_entity_id(graph, current.staged_entities); };
    auto updated = apply_expert_edit(current, action, graph, new_id);
    current = std::move(updated);
    commit(current);
    return current;
}

EvolutionDiff Worklist::approve(const std::string& id, GraphStore& store, const EmbeddingProvider& provider,
                                const EvolutionConfig& config, const std::string& reviewer, Timestamp now,
                                std::optional<std::uint64_t> expected_version) {
    if (reviewer.empty()) throw Error(ErrorCode::invalid_argument, "approval needs a reviewer");
    std::lock_guard approving(approve_mutex_);
    EvolutionEvent event;
    {
        std::lock_guard lock(mutex_);
        event = locate(id, expected_version);
    }
    if (event.status != EventStatus::drafted && event.status != EventStatus::under_review) {
        throw Error(ErrorCode::invalid_state, "event " + id + " is " + std::string(to_string(event.status)) +
                                                  "; only drafted or reviewed events can be approved");
    }

    const auto snapshot = store.snapshot();
    auto redundancy = check_redundancy(*event.draft_triples, event.staged_entities, *snapshot, provider, config);

    MergeBatch batch;
    std::set<std::string> referenced;
    for (auto& t : redundancy.survivors) {
        t.provenance.reviewer = reviewer;
        t.provenance.reviewed_at = now;
        referenced.insert(t.subject);
        referenced.insert(t.object);
        batch.triples.push_back(t);
    }
    std::optional<std::string> disease_id = event.disease_id;
    for (const auto& s : event.staged_entities) {
        const bool is_disease = s.kind == EntityKind::disease &&
                                normalize_text(s.name) == normalize_text(event.disease_name);
        if (is_disease && !disease_id) disease_id = s.id;
        if (referenced.count(s.id) || (is_disease && disease_id == s.id)) batch.entities.push_back(s);
    }

    MergeDiff merged;
    try {
        store.update([&](KnowledgeGraph& g) {
            merged = g.merge(batch, now);
            if (disease_id) g.set_last_evolution(*disease_id, now);
        });
    } catch (const Error& e) {
        throw Error(ErrorCode::conflict, "merge of event " + id + " failed: " + e.what(), true);
    }

    EvolutionDiff diff;
    diff.added_entities = merged.added_entities;
    diff.added_triples = merged.added;
    std::set<TripleKey> near_keys;
    for (const auto& n : redundancy.report.near_removed) {
        near_keys.insert(n.triple.key());
        diff.removed_draft_triples.push_back({n.triple, "near_duplicate"});
    }
    {
        std::set<TripleKey> surviving;
        for (const auto& t : redundancy.survivors) surviving.insert(t.key());
        std::set<TripleKey> reported;
        for (const auto& t : *event.draft_triples) {
            if (!surviving.count(t.key()) && !near_keys.count(t.key()) && reported.insert(t.key()).second) {
                diff.removed_draft_triples.push_back({t, "exact_duplicate"});
            }
        }
    }
    for (const auto& a : event.expert_edits) {
        if (a.kind == EditKind::delete_triple && a.payload.contains("removed")) {
            diff.removed_draft_triples.push_back({triple_from_json(a.payload["removed"]), "expert_delete"});
        }
    }

    std::lock_guard lock(mutex_);
    auto& current = events_.at(id);
    current.dedup_report = redundancy.report;
    current.merged_diff = diff;
    current.disease_id = disease_id;
    current.status = EventStatus::merged;
    commit(current);
    return diff;
}

EvolutionEvent Worklist::reject(const std::string& id, const std::string& actor, Timestamp now,
                                std::optional<std::uint64_t> expected_version) {
    std::lock_guard lock(mutex_);
    auto& current = locate(id, expected_version);
    if (!can_transition(current.status, EventStatus::rejected)) {
        throw Error(ErrorCode::invalid_state, "event " + id + " is already " + std::string(to_string(current.status)));
    }
    current.expert_edits.push_back({EditKind::rebalance_note, {{"note", "rejected"}}, actor, now});
    current.status = EventStatus::rejected;
    commit(current);
    return current;
}

EvolutionDiff Worklist::diff(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = events_.find(id);
    if (it == events_.end()) throw Error(ErrorCode::not_found, "no evolution event '" + id + "'");
    if (!it->second.merged_diff) {
        throw Error(ErrorCode::invalid_state, "event " + id + " has not been merged");
    }
    return *it->second.merged_diff;
}

} // namespace kgdx
