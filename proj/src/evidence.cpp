#include "kgdx/evidence.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <sstream>

namespace kgdx {

std::string_view to_string(EvidenceLabel l) {
    switch (l) {
        case EvidenceLabel::subjective_symptom: return "subjective_symptom";
        case EvidenceLabel::objective_guideline: return "objective_guideline";
        case EvidenceLabel::inferred_reasoning: return "inferred_reasoning";
    }
    return "inferred_reasoning";
}

namespace {

EvidenceLabel label_from_string(std::string_view text) {
    for (auto l : {EvidenceLabel::subjective_symptom, EvidenceLabel::objective_guideline,
                   EvidenceLabel::inferred_reasoning}) {
        if (to_string(l) == text) return l;
    }
    throw Error(ErrorCode::invalid_argument, "unknown evidence label '" + std::string(text) + "'");
}

Json ranked_json(const std::vector<RankedTriple>& items) {
    Json a = Json::array();
    for (const auto& r : items) {
        auto t = triple_to_json(r.triple);
        t["rank"] = r.rank;
        a.push_back(std::move(t));
    }
    return a;
}

std::vector<RankedTriple> ranked_from(const Json& a) {
    std::vector<RankedTriple> out;
    for (const auto& t : a) out.push_back({triple_from_json(t), t.at("rank").get<int>()});
    return out;
}

void renumber(std::vector<RankedTriple>& items) {
    for (std::size_t i = 0; i < items.size(); ++i) items[i].rank = static_cast<int>(i + 1);
}

} // namespace

std::vector<TripleKey> EvidenceBundle::included() const {
    std::set<TripleKey> keys;
    if (definition_edge) keys.insert(definition_edge->key());
    for (const auto& r : symptom_edges) keys.insert(r.triple.key());
    for (const auto& r : drug_edges) keys.insert(r.triple.key());
    for (const auto& t : path_edges) keys.insert(t.key());
    return {keys.begin(), keys.end()};
}

std::set<std::string> EvidenceBundle::entity_ids() const {
    std::set<std::string> ids{disease_id};
    for (const auto& k : included()) {
        ids.insert(k.subject);
        ids.insert(k.object);
    }
    for (const auto& [_, path] : paths) ids.insert(path.begin(), path.end());
    ids.insert(linked_symptoms.begin(), linked_symptoms.end());
    for (const auto& [drug, neighbors] : drug_extended) {
        ids.insert(drug);
        for (const auto& n : neighbors) ids.insert(n.entity.id);
    }
    return ids;
}

Json to_json(const EvidenceBundle& b, const KnowledgeGraph* graph) {
    Json paths = Json::object();
    for (const auto& [id, p] : b.paths) paths[id] = p;
    Json path_edges = Json::array();
    for (const auto& t : b.path_edges) path_edges.push_back(triple_to_json(t));
    Json extended = Json::object();
    for (const auto& [drug, neighbors] : b.drug_extended) {
        Json list = Json::array();
        for (const auto& n : neighbors) {
            list.push_back({{"triple", triple_to_json(n.triple)}, {"entity", entity_to_json(n.entity)}});
        }
        extended[drug] = std::move(list);
    }
    Json labels = Json::object();
    for (const auto& [k, l] : b.labels) labels[k] = to_string(l);
    Json j = {{"disease_id", b.disease_id},
              {"definition", b.definition ? Json(*b.definition) : Json(nullptr)},
              {"definition_edge", b.definition_edge ? triple_to_json(*b.definition_edge) : Json(nullptr)},
              {"symptom_edges", ranked_json(b.symptom_edges)},
              {"paths", paths},
              {"path_edges", path_edges},
              {"drug_edges", ranked_json(b.drug_edges)},
              {"drug_extended", extended},
              {"linked_symptoms", b.linked_symptoms},
              {"labels", labels},
              {"warnings", b.warnings}};
    if (graph) {
        Json names = Json::object();
        for (const auto& id : b.entity_ids()) {
            if (const auto* e = graph->find(id)) names[id] = e->name;
        }
        j["entity_names"] = std::move(names);
    }
    return j;
}

EvidenceBundle evidence_bundle_from_json(const Json& j) {
    EvidenceBundle b;
    b.disease_id = j.at("disease_id").get<std::string>();
    b.definition = optional_field<std::string>(j, "definition");
    if (j.contains("definition_edge") && !j["definition_edge"].is_null()) {
        b.definition_edge = triple_from_json(j["definition_edge"]);
    }
    b.symptom_edges = ranked_from(j.at("symptom_edges"));
    for (const auto& [id, p] : j.at("paths").items()) b.paths[id] = p.get<std::vector<std::string>>();
    for (const auto& t : j.at("path_edges")) b.path_edges.push_back(triple_from_json(t));
    b.drug_edges = ranked_from(j.at("drug_edges"));
    for (const auto& [drug, list] : j.at("drug_extended").items()) {
        auto& out = b.drug_extended[drug];
        for (const auto& n : list) out.push_back({triple_from_json(n.at("triple")), entity_from_json(n.at("entity"))});
    }
    b.linked_symptoms = j.at("linked_symptoms").get<std::vector<std::string>>();
    for (const auto& [k, l] : j.at("labels").items()) b.labels[k] = label_from_string(l.get<std::string>());
    b.warnings = j.value("warnings", std::vector<std::string>{});
    return b;
}

// ---------------------------------------------------------------------------

EvidenceBundle assemble_bundle(const KnowledgeGraph& graph, const std::string& disease_id,
                               const std::vector<std::string>& linked_symptoms) {
    const auto& disease = graph.entity(disease_id);
    if (disease.kind != EntityKind::disease) {
        throw Error(ErrorCode::invalid_argument, "'" + disease_id + "' is not a disease");
    }
    EvidenceBundle b;
    b.disease_id = disease_id;
    for (const auto& s : linked_symptoms) {
        if (std::find(b.linked_symptoms.begin(), b.linked_symptoms.end(), s) == b.linked_symptoms.end()) {
            b.linked_symptoms.push_back(s);
        }
    }

    for (const auto& n : graph.one_hop_neighbors(disease_id, EntityKind::definition)) {
        b.definition = n.entity.definition_text.value_or(n.entity.name);
        b.definition_edge = n.triple;
        break;
    }
    if (!b.definition && disease.definition_text) b.definition = disease.definition_text;

    for (const auto& n : graph.one_hop_neighbors(disease_id, EntityKind::symptom)) {
        b.symptom_edges.push_back({n.triple, 0});
    }
    for (const auto& n : graph.one_hop_neighbors(disease_id, EntityKind::drug)) {
        b.drug_edges.push_back({n.triple, 0});
    }
    renumber(b.symptom_edges);
    renumber(b.drug_edges);

    std::set<TripleKey> hop_keys;
    for (const auto& s : b.linked_symptoms) {
        auto path = graph.shortest_path(disease_id, s);
        if (!path) continue;
        for (std::size_t i = 0; i + 1 < path->size(); ++i) {
            auto key = graph.edge_between((*path)[i], (*path)[i + 1]);
            if (key && hop_keys.insert(*key).second) b.path_edges.push_back(*graph.find_triple(*key));
        }
        b.paths[s] = std::move(*path);
    }
    return categorize_evidence(std::move(b));
}

EvidenceBundle build_bundle(KnowledgeGraph& graph, const std::string& disease_id,
                            const std::vector<std::string>& linked_symptoms) {
    auto bundle = assemble_bundle(graph, disease_id, linked_symptoms);
    const auto keys = bundle.included();
    graph.record_usage(keys);
    return bundle;
}

EvidenceBundle build_bundle(GraphStore& store, const std::string& disease_id,
                            const std::vector<std::string>& linked_symptoms) {
    auto bundle = assemble_bundle(*store.snapshot(), disease_id, linked_symptoms);
    const auto keys = bundle.included();
    if (!keys.empty()) store.record_usage(keys);
    return bundle;
}

// ---------------------------------------------------------------------------

namespace {

void reorder(std::vector<RankedTriple>& items, const Json& lines, const char* category,
             std::vector<std::string>& warnings) {
    std::vector<RankedTriple> ordered;
    std::set<TripleKey> placed;
    for (const auto& line : lines) {
        const auto text = line.is_string() ? trim(line.get<std::string>()) : line.dump();
        std::optional<TripleKey> key;
        try {
            key = TripleKey::parse(text);
        } catch (const Error&) {
        }
        auto it = key ? std::find_if(items.begin(), items.end(),
                                     [&](const RankedTriple& r) { return r.triple.key() == *key; })
                      : items.end();
        if (it == items.end()) {
            warnings.push_back(std::string("ignored unknown ") + category + " evidence '" + text + "'");
            continue;
        }
        if (placed.insert(*key).second) ordered.push_back(*it);
    }
    bool missing = false;
    for (const auto& r : items) {
        if (!placed.count(r.triple.key())) {
            ordered.push_back(r);
            missing = true;
        }
    }
    if (missing) warnings.push_back(std::string("ranking omitted some ") + category + " evidence; ranked last");
    renumber(ordered);
    items = std::move(ordered);
}

std::string edge_lines(const std::vector<RankedTriple>& items) {
    std::string out;
    for (const auto& r : items) out += r.triple.key().str() + "\n";
    return out.empty() ? "(none)\n" : out;
}

} // namespace

EvidenceBundle apply_ranking(EvidenceBundle bundle, const Json& ranking) {
    reorder(bundle.symptom_edges, ranking.value("symptoms", Json::array()), "symptom", bundle.warnings);
    reorder(bundle.drug_edges, ranking.value("drugs", Json::array()), "drug", bundle.warnings);
    for (const auto& w : bundle.warnings) spdlog::warn("rank_evidence: {}", w);
    return bundle;
}

EvidenceBundle rank_evidence(EvidenceBundle bundle, const std::string& history_text, Gateway& gateway) {
    if (bundle.symptom_edges.empty() && bundle.drug_edges.empty()) return bundle;
    const auto ranking = gateway.call(TemplateId::rank_evidence, {{"disease", bundle.disease_id},
                                                                  {"history", history_text},
                                                                  {"symptom_edges", edge_lines(bundle.symptom_edges)},
                                                                  {"drug_edges", edge_lines(bundle.drug_edges)}});
    return apply_ranking(std::move(bundle), ranking);
}

EvidenceLabel label_for(const Triple& t, const std::set<std::string>& patient_symptoms) {
    if (patient_symptoms.count(t.subject) || patient_symptoms.count(t.object)) {
        return EvidenceLabel::subjective_symptom;
    }
    if (t.provenance.reviewer) return EvidenceLabel::objective_guideline;
    return EvidenceLabel::inferred_reasoning;
}

EvidenceBundle categorize_evidence(EvidenceBundle bundle) {
    const std::set<std::string> patient(bundle.linked_symptoms.begin(), bundle.linked_symptoms.end());
    bundle.labels.clear();
    auto label = [&](const Triple& t) { bundle.labels[t.key().str()] = label_for(t, patient); };
    if (bundle.definition_edge) label(*bundle.definition_edge);
    for (const auto& r : bundle.symptom_edges) label(r.triple);
    for (const auto& r : bundle.drug_edges) label(r.triple);
    for (const auto& t : bundle.path_edges) label(t);
    return bundle;
}

void expand_drug(EvidenceBundle& bundle, const KnowledgeGraph& graph, const std::string& drug_id) {
    const bool in_bundle = std::any_of(bundle.drug_edges.begin(), bundle.drug_edges.end(), [&](const RankedTriple& r) {
        return r.triple.subject == drug_id || r.triple.object == drug_id;
    });
    if (!in_bundle) throw Error(ErrorCode::not_found, "drug '" + drug_id + "' is not in this bundle");
    if (bundle.drug_extended.count(drug_id)) return;
    auto neighbors = graph.one_hop_neighbors(drug_id);
    std::erase_if(neighbors, [&](const Neighbor& n) { return n.entity.id == bundle.disease_id; });
    bundle.drug_extended[drug_id] = std::move(neighbors);
}

// ---------------------------------------------------------------------------
// Reports

Json to_json(const ReportEdit& e) {
    return {{"target", e.target}, {"op", e.op},       {"index", e.index},
            {"text", e.text},     {"actor", e.actor}, {"timestamp", format_rfc3339(e.at)}};
}

Json to_json(const ReasoningReport& r) {
    Json edits = Json::array();
    for (const auto& e : r.edit_log) edits.push_back(to_json(e));
    Json fields = nullptr;
    if (r.fields) {
        fields = {{"conclusion", r.fields->conclusion},
                  {"plan", r.fields->plan},
                  {"follow_up", r.fields->follow_up},
                  {"precautions", r.fields->precautions}};
    }
    return {{"disease_id", r.disease_id},
            {"steps", r.steps},
            {"treatment_items", r.treatment_items},
            {"patient_facing_text", r.patient_facing_text ? Json(*r.patient_facing_text) : Json(nullptr)},
            {"finalized_by", r.finalized_by ? Json(*r.finalized_by) : Json(nullptr)},
            {"finalized_at", r.finalized_at ? Json(format_rfc3339(*r.finalized_at)) : Json(nullptr)},
            {"fields", fields},
            {"edit_log", edits}};
}

ReasoningReport reasoning_report_from_json(const Json& j) {
    ReasoningReport r;
    r.disease_id = j.at("disease_id").get<std::string>();
    r.steps = j.at("steps").get<std::vector<std::string>>();
    r.treatment_items = j.at("treatment_items").get<std::vector<std::string>>();
    r.patient_facing_text = optional_field<std::string>(j, "patient_facing_text");
    r.finalized_by = optional_field<std::string>(j, "finalized_by");
    if (auto at = optional_field<std::string>(j, "finalized_at")) r.finalized_at = parse_rfc3339(*at);
    if (j.contains("fields") && !j["fields"].is_null()) {
        const auto& f = j["fields"];
        r.fields = FinalizeFields{f.at("conclusion").get<std::string>(), f.at("plan").get<std::string>(),
                                  f.at("follow_up").get<std::string>(), f.at("precautions").get<std::string>()};
    }
    for (const auto& e : j.value("edit_log", Json::array())) {
        r.edit_log.push_back({e.at("target").get<std::string>(), e.at("op").get<std::string>(),
                              e.at("index").get<std::size_t>(), e.at("text").get<std::string>(),
                              e.at("actor").get<std::string>(), parse_rfc3339(e.at("timestamp").get<std::string>())});
    }
    return r;
}

namespace {

std::string name_of(const KnowledgeGraph& graph, const std::string& id) {
    const auto* e = graph.find(id);
    return e ? e->name : id;
}

std::string render_bundle_text(const EvidenceBundle& b, const KnowledgeGraph& graph) {
    std::ostringstream out;
    out << "Definition: " << b.definition.value_or("(none recorded)") << "\n";
    out << "Symptoms (most important first):\n";
    for (const auto& r : b.symptom_edges) {
        out << "  " << r.rank << ". " << name_of(graph, r.triple.subject) << " " << r.triple.relation << " "
            << name_of(graph, r.triple.object) << "\n";
    }
    out << "Paths to the patient's symptoms:\n";
    for (const auto& [sid, path] : b.paths) {
        out << "  ";
        for (std::size_t i = 0; i < path.size(); ++i) out << (i ? " -> " : "") << name_of(graph, path[i]);
        out << "\n";
    }
    out << "Drugs (most important first):\n";
    for (const auto& r : b.drug_edges) {
        out << "  " << r.rank << ". " << name_of(graph, r.triple.subject) << " " << r.triple.relation << " "
            << name_of(graph, r.triple.object) << "\n";
    }
    return out.str();
}

std::vector<std::string>& edit_target(ReasoningReport& report, const std::string& target) {
    if (target == "steps") return report.steps;
    if (target == "treatment_items") return report.treatment_items;
    throw Error(ErrorCode::invalid_argument, "unknown report section '" + target + "'");
}

} // namespace

ReasoningReport generate_report(const std::string& history_text, const EvidenceBundle& bundle,
                                const KnowledgeGraph& graph, const std::string& disease_name, Gateway& gateway) {
    const auto parsed = gateway.call(TemplateId::reason, {{"disease_name", disease_name},
                                                          {"history", history_text},
                                                          {"evidence", render_bundle_text(bundle, graph)}});
    ReasoningReport report;
    report.disease_id = bundle.disease_id;
    report.steps = parsed.at("steps").get<std::vector<std::string>>();
    report.treatment_items = parsed.at("treatment").get<std::vector<std::string>>();
    return report;
}

void apply_report_edit(ReasoningReport& report, ReportEdit edit) {
    if (report.finalized()) throw Error(ErrorCode::invalid_state, "report is finalized and can no longer be edited");
    if (edit.actor.empty()) throw Error(ErrorCode::invalid_argument, "edit has no actor");
    auto& items = edit_target(report, edit.target);
    if (edit.op == "replace") {
        if (edit.index >= items.size()) throw Error(ErrorCode::invalid_argument, "edit index out of range");
        if (trim(edit.text).empty()) throw Error(ErrorCode::invalid_argument, "replacement text is empty");
        items[edit.index] = edit.text;
    } else if (edit.op == "insert") {
        if (edit.index > items.size()) throw Error(ErrorCode::invalid_argument, "edit index out of range");
        if (trim(edit.text).empty()) throw Error(ErrorCode::invalid_argument, "inserted text is empty");
        items.insert(items.begin() + static_cast<std::ptrdiff_t>(edit.index), edit.text);
    } else if (edit.op == "delete") {
        if (edit.index >= items.size()) throw Error(ErrorCode::invalid_argument, "edit index out of range");
        items.erase(items.begin() + static_cast<std::ptrdiff_t>(edit.index));
    } else {
        throw Error(ErrorCode::invalid_argument, "unknown edit op '" + edit.op + "'");
    }
    report.edit_log.push_back(std::move(edit));
}

std::string finalize_report(ReasoningReport& report, const FinalizeFields& fields, Gateway& gateway,
                            const std::string& physician, Timestamp now) {
    if (report.finalized()) throw Error(ErrorCode::invalid_state, "report is already finalized");
    std::vector<std::string> missing;
    if (trim(fields.conclusion).empty()) missing.push_back("conclusion");
    if (trim(fields.plan).empty()) missing.push_back("plan");
    if (trim(fields.follow_up).empty()) missing.push_back("follow_up");
    if (trim(fields.precautions).empty()) missing.push_back("precautions");
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw ValidationError("missing required fields: " + list, missing);
    }
    if (physician.empty()) throw Error(ErrorCode::invalid_argument, "finalize needs a physician");

    const auto text = gateway.call(TemplateId::patient_rewrite, {{"conclusion", fields.conclusion},
                                                                 {"plan", fields.plan},
                                                                 {"follow_up", fields.follow_up},
                                                                 {"precautions", fields.precautions}})
                          .get<std::string>();
    if (trim(text).empty()) throw Error(ErrorCode::gateway, "patient explanation is empty", true);
    report.fields = fields;
    report.patient_facing_text = text;
    report.finalized_by = physician;
    report.finalized_at = now;
    return text;
}

std::vector<std::string> annotate(const std::string& text, const EvidenceBundle& bundle, const KnowledgeGraph& graph) {
    const auto haystack = " " + normalize_text(text) + " ";
    std::vector<std::string> out;
    for (const auto& id : bundle.entity_ids()) {
        const auto* e = graph.find(id);
        if (!e) continue;
        const auto needle = normalize_text(e->name);
        if (!needle.empty() && haystack.find(" " + needle + " ") != std::string::npos) out.push_back(id);
    }
    return out;
}

} // namespace kgdx
