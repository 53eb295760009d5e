#include "kgdx/diagnosis.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>
#include <sstream>

namespace kgdx {

std::string_view to_string(CandidateSource s) {
    switch (s) {
        case CandidateSource::kg: return "kg";
        case CandidateSource::llm: return "llm";
        case CandidateSource::both: return "both";
    }
    return "kg";
}

void validate(const DiagnosisConfig& config) {
    validate(config.linker);
    if (config.k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
    if (config.kg_top < 1) throw Error(ErrorCode::invalid_argument, "kg_top must be at least 1");
}

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json path_json(const std::optional<std::vector<std::string>>& p) { return p ? Json(*p) : Json(nullptr); }

Json neighbor_json(const SymptomNeighbor& n) {
    return {{"symptom_id", n.symptom_id},
            {"name", n.name},
            {"relation", n.relation},
            {"similarity", n.similarity},
            {"closest_linked", n.closest_linked ? Json(*n.closest_linked) : Json(nullptr)}};
}

} // namespace

Json to_json(const CandidateDiagnosis& c) {
    Json distances = Json::object();
    for (const auto& [id, d] : c.distances) distances[id] = d ? Json(*d) : Json(nullptr);
    return {{"disease_id", c.disease_id},
            {"name", c.name},
            {"source", to_string(c.source)},
            {"kg_score", c.kg_score},
            {"distances", distances},
            {"llm_likelihood", optional_json(c.llm_likelihood)},
            {"relative_likelihood", optional_json(c.relative_likelihood)},
            {"severity", c.severity}};
}

Json to_json(const EvidenceContext& c) {
    Json out = Json::array();
    for (const auto& cc : c.candidates) {
        Json symptoms = Json::array();
        for (const auto& n : cc.symptoms) symptoms.push_back(neighbor_json(n));
        Json background = Json::array();
        for (const auto& n : cc.background) background.push_back(neighbor_json(n));
        Json paths = Json::object();
        for (const auto& [id, p] : cc.paths) paths[id] = path_json(p);
        Json triples = Json::array();
        for (const auto& k : cc.triples) triples.push_back(k.str());
        out.push_back({{"disease_id", cc.disease_id},
                       {"name", cc.name},
                       {"definition", cc.definition},
                       {"symptom_neighbors", symptoms},
                       {"background_neighbors", background},
                       {"paths", paths},
                       {"triples", triples}});
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> recognize_symptoms(const std::string& history_text, Gateway& gateway) {
    if (trim(history_text).empty()) throw Error(ErrorCode::invalid_argument, "history is empty");
    const auto lines = gateway.call(TemplateId::recognize, {{"history", history_text}});
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& line : lines) {
        auto mention = trim(line.get<std::string>());
        if (!mention.empty() && seen.insert(normalize_text(mention)).second) out.push_back(std::move(mention));
    }
    return out;
}

RecognizedSymptoms link_symptoms(const std::vector<std::string>& mentions, const SimilarityIndex& symptom_index,
                                 const LinkerConfig& config) {
    auto all = link_all(mentions, symptom_index, config);
    return {mentions, std::move(all.results), std::move(all.matched)};
}

double kg_score(const KnowledgeGraph& graph, const std::string& disease_id, const std::vector<std::string>& linked,
                std::map<std::string, std::optional<std::size_t>>* distances) {
    const auto dist = graph.distances_from(disease_id);
    double score = 0.0;
    std::set<std::string> counted;
    for (const auto& s : linked) {
        if (!counted.insert(s).second) continue;
        auto it = dist.find(s);
        std::optional<std::size_t> d;
        if (it != dist.end()) d = it->second;
        if (distances) (*distances)[s] = d;
        if (d && *d > 0) score += 1.0 / static_cast<double>(*d);
    }
    return score;
}

namespace {

CandidateDiagnosis make_candidate(const KnowledgeGraph& graph, const Entity& disease,
                                  const std::vector<std::string>& linked, CandidateSource source) {
    CandidateDiagnosis c;
    c.disease_id = disease.id;
    c.name = disease.name;
    c.source = source;
    c.severity = disease.severity.value_or(0);
    c.kg_score = kg_score(graph, disease.id, linked, &c.distances);
    return c;
}

} // namespace

std::vector<CandidateDiagnosis> kg_candidates(const KnowledgeGraph& graph, const std::vector<std::string>& linked,
                                              std::size_t top) {
    std::set<std::string> diseases;
    for (const auto& s : linked) {
        for (const auto& n : graph.one_hop_neighbors(s, EntityKind::disease)) diseases.insert(n.entity.id);
    }
    std::vector<CandidateDiagnosis> out;
    for (const auto& id : diseases) out.push_back(make_candidate(graph, graph.entity(id), linked, CandidateSource::kg));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.kg_score != b.kg_score) return a.kg_score > b.kg_score;
        return a.disease_id < b.disease_id;
    });
    if (out.size() > top) out.resize(top);
    return out;
}

CombineResult combine_candidates(const KnowledgeGraph& graph, const std::vector<CandidateDiagnosis>& kg_top,
                                 const std::vector<DdxEntry>& preliminary_ddx, const SimilarityIndex& disease_index,
                                 const std::vector<std::string>& linked, const LinkerConfig& config) {
    CombineResult result;
    result.candidates = kg_top;
    for (auto& c : result.candidates) c.source = CandidateSource::kg;
    for (const auto& entry : preliminary_ddx) {
        const auto hit = link(entry.disease_name, disease_index, config);
        if (!hit.matched) {
            result.unlinked_names.push_back(entry.disease_name);
            continue;
        }
        auto it = std::find_if(result.candidates.begin(), result.candidates.end(),
                               [&](const CandidateDiagnosis& c) { return c.disease_id == *hit.matched; });
        if (it == result.candidates.end()) {
            result.candidates.push_back(make_candidate(graph, graph.entity(*hit.matched), linked, CandidateSource::llm));
        } else if (it->source == CandidateSource::kg) {
            it->source = CandidateSource::both;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------

EvidenceContext build_evidence_context(const KnowledgeGraph& graph, const std::vector<CandidateDiagnosis>& candidates,
                                       const std::vector<std::string>& linked, const SimilarityIndex& symptom_index,
                                       const DiagnosisConfig& config) {
    auto vector_for = [&](const Entity& e) {
        if (const auto* v = symptom_index.vector_of(e.id)) return *v;
        return symptom_index.provider().embed(e.name);
    };
    std::vector<std::pair<std::string, Vector>> linked_vectors;
    for (const auto& id : linked) linked_vectors.emplace_back(id, vector_for(graph.entity(id)));

    EvidenceContext context;
    for (const auto& c : candidates) {
        CandidateContext cc;
        cc.disease_id = c.disease_id;
        cc.name = c.name;
        std::set<TripleKey> used;

        const auto& disease = graph.entity(c.disease_id);
        for (const auto& n : graph.one_hop_neighbors(c.disease_id, EntityKind::definition)) {
            cc.definition = n.entity.definition_text.value_or(n.entity.name);
            used.insert(n.triple.key());
            break;
        }
        if (cc.definition.empty() && disease.definition_text) cc.definition = *disease.definition_text;

        std::vector<std::pair<SymptomNeighbor, TripleKey>> scored;
        for (const auto& n : graph.one_hop_neighbors(c.disease_id, EntityKind::symptom)) {
            SymptomNeighbor sn{n.entity.id, n.entity.name, n.triple.relation, -1.0, std::nullopt};
            const auto v = vector_for(n.entity);
            for (const auto& [lid, lv] : linked_vectors) {
                const double s = cosine_similarity(v, lv);
                if (s > sn.similarity) {
                    sn.similarity = s;
                    sn.closest_linked = lid;
                }
            }
            scored.emplace_back(std::move(sn), n.triple.key());
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first.similarity != b.first.similarity) return a.first.similarity > b.first.similarity;
            return a.first.symptom_id < b.first.symptom_id;
        });
        std::set<std::string> listed;
        for (auto& [sn, key] : scored) {
            // A symptom joined by several relations is listed once.
            if (!listed.insert(sn.symptom_id).second) continue;
            if (sn.similarity >= config.linker.epsilon_s) {
                if (cc.symptoms.size() < config.neighbor_cap) {
                    used.insert(key);
                    cc.symptoms.push_back(sn);
                }
            } else if (cc.background.size() < config.neighbor_cap) {
                if (!sn.closest_linked) sn.similarity = -1.0;
                cc.background.push_back(sn);
            }
        }

        for (const auto& s : linked) {
            auto path = graph.shortest_path(c.disease_id, s);
            if (path) {
                for (std::size_t i = 0; i + 1 < path->size(); ++i) {
                    if (auto k = graph.edge_between((*path)[i], (*path)[i + 1])) used.insert(*k);
                }
            }
            cc.paths[s] = std::move(path);
        }
        cc.triples.assign(used.begin(), used.end());
        context.candidates.push_back(std::move(cc));
    }
    return context;
}

std::string render_context_text(const KnowledgeGraph& graph, const EvidenceContext& context) {
    std::ostringstream out;
    for (const auto& cc : context.candidates) {
        out << "### " << cc.name << "\n";
        out << "Definition: " << (cc.definition.empty() ? "(none recorded)" : cc.definition) << "\n";
        out << "Matching symptoms:";
        if (cc.symptoms.empty()) out << " (none)";
        for (const auto& s : cc.symptoms) out << " " << s.name << ";";
        out << "\nOther known symptoms:";
        if (cc.background.empty()) out << " (none)";
        for (const auto& s : cc.background) out << " " << s.name << ";";
        out << "\nPaths to patient symptoms:\n";
        for (const auto& [sid, path] : cc.paths) {
            out << "  " << graph.entity(sid).name << ": ";
            if (!path) {
                out << "no connection\n";
                continue;
            }
            for (std::size_t i = 0; i < path->size(); ++i) {
                out << (i ? " -> " : "") << graph.entity((*path)[i]).name;
            }
            out << "\n";
        }
        out << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------

void sort_ranked(std::vector<CandidateDiagnosis>& candidates) {
    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        const double la = a.llm_likelihood.value_or(0.0), lb = b.llm_likelihood.value_or(0.0);
        if (la != lb) return la > lb;
        if (a.kg_score != b.kg_score) return a.kg_score > b.kg_score;
        return a.disease_id < b.disease_id;
    });
}

RankResult rank_and_select(const std::string& history_text, const KnowledgeGraph& graph,
                           const EvidenceContext& context, std::vector<CandidateDiagnosis> candidates,
                           Gateway& gateway, std::size_t k) {
    if (candidates.empty()) throw Error(ErrorCode::invalid_argument, "no candidates to rank");
    if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");

    std::string names;
    for (const auto& c : candidates) names += "- " + c.name + "\n";
    const auto scores = gateway.call(TemplateId::rank, {{"history", history_text},
                                                        {"candidates", names},
                                                        {"context", render_context_text(graph, context)}});

    RankResult result;
    std::set<std::string> scored;
    for (const auto& s : scores) {
        const auto name = s.at("name").get<std::string>();
        const auto key = normalize_text(name);
        auto it = std::find_if(candidates.begin(), candidates.end(), [&](const CandidateDiagnosis& c) {
            return normalize_text(c.name) == key || normalize_text(c.disease_id) == key;
        });
        if (it == candidates.end()) {
            result.warnings.push_back("ignored score for unknown candidate '" + name + "'");
            continue;
        }
        if (!scored.insert(it->disease_id).second) {
            result.warnings.push_back("ignored repeated score for '" + name + "'");
            continue;
        }
        const double raw = s.at("raw_score").get<double>();
        const double score = s.at("score").get<double>();
        if (raw != score) {
            result.warnings.push_back("clamped likelihood " + s.at("raw_score").dump() + " for '" + name + "'");
        }
        it->llm_likelihood = score;
    }
    for (auto& c : candidates) {
        if (!c.llm_likelihood) {
            result.warnings.push_back("no likelihood for '" + c.name + "'; assigned 0");
            c.llm_likelihood = 0.0;
        }
        c.relative_likelihood = *c.llm_likelihood * 10.0;
    }
    for (const auto& w : result.warnings) spdlog::warn("rank: {}", w);

    sort_ranked(candidates);
    result.ranked = candidates;
    candidates.resize(std::min(k, candidates.size()));
    result.selected = std::move(candidates);
    return result;
}

// ---------------------------------------------------------------------------

Json to_json(const DiagnosisRecord& r) {
    auto list = [](const std::vector<CandidateDiagnosis>& cs) {
        Json a = Json::array();
        for (const auto& c : cs) a.push_back(to_json(c));
        return a;
    };
    Json links = Json::array();
    for (const auto& l : r.symptoms.links) {
        links.push_back({{"mention", l.mention},
                         {"matched", l.matched ? Json(*l.matched) : Json(nullptr)},
                         {"similarity", l.similarity}});
    }
    return {{"symptoms", {{"mentions", r.symptoms.mentions}, {"links", links}, {"linked", r.symptoms.linked}}},
            {"kg_candidates", list(r.kg_top)},
            {"combined", list(r.combined)},
            {"candidates", list(r.candidates)},
            {"evidence_context", to_json(r.evidence_context)},
            {"unlinked_names", r.unlinked_names},
            {"evolution_events", r.evolution_events},
            {"warnings", r.warnings}};
}

CandidateSource candidate_source_from_string(std::string_view text) {
    for (auto s : {CandidateSource::kg, CandidateSource::llm, CandidateSource::both}) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::invalid_argument, "unknown candidate source '" + std::string(text) + "'");
}

CandidateDiagnosis candidate_from_json(const Json& j) {
    CandidateDiagnosis c;
    c.disease_id = j.at("disease_id").get<std::string>();
    c.name = j.at("name").get<std::string>();
    c.source = candidate_source_from_string(j.at("source").get<std::string>());
    c.kg_score = j.at("kg_score").get<double>();
    for (const auto& [id, d] : j.at("distances").items()) {
        c.distances[id] = d.is_null() ? std::nullopt : std::optional<std::size_t>(d.get<std::size_t>());
    }
    c.llm_likelihood = optional_field<double>(j, "llm_likelihood");
    c.relative_likelihood = optional_field<double>(j, "relative_likelihood");
    c.severity = j.at("severity").get<int>();
    return c;
}

EvidenceContext evidence_context_from_json(const Json& j) {
    auto neighbor = [](const Json& n) {
        return SymptomNeighbor{n.at("symptom_id").get<std::string>(), n.at("name").get<std::string>(),
                               n.at("relation").get<std::string>(), n.at("similarity").get<double>(),
                               optional_field<std::string>(n, "closest_linked")};
    };
    EvidenceContext out;
    for (const auto& cj : j) {
        CandidateContext cc;
        cc.disease_id = cj.at("disease_id").get<std::string>();
        cc.name = cj.at("name").get<std::string>();
        cc.definition = cj.at("definition").get<std::string>();
        for (const auto& n : cj.at("symptom_neighbors")) cc.symptoms.push_back(neighbor(n));
        for (const auto& n : cj.at("background_neighbors")) cc.background.push_back(neighbor(n));
        for (const auto& [id, p] : cj.at("paths").items()) {
            cc.paths[id] = p.is_null() ? std::nullopt
                                       : std::optional<std::vector<std::string>>(p.get<std::vector<std::string>>());
        }
        for (const auto& k : cj.at("triples")) cc.triples.push_back(TripleKey::parse(k.get<std::string>()));
        out.candidates.push_back(std::move(cc));
    }
    return out;
}

DiagnosisRecord diagnosis_record_from_json(const Json& j) {
    auto list = [](const Json& a) {
        std::vector<CandidateDiagnosis> out;
        for (const auto& c : a) out.push_back(candidate_from_json(c));
        return out;
    };
    DiagnosisRecord r;
    const auto& s = j.at("symptoms");
    r.symptoms.mentions = s.at("mentions").get<std::vector<std::string>>();
    for (const auto& l : s.at("links")) {
        r.symptoms.links.push_back(
            {l.at("mention").get<std::string>(), optional_field<std::string>(l, "matched"), l.at("similarity").get<double>()});
    }
    r.symptoms.linked = s.at("linked").get<std::vector<std::string>>();
    r.kg_top = list(j.at("kg_candidates"));
    r.combined = list(j.at("combined"));
    r.candidates = list(j.at("candidates"));
    r.evidence_context = evidence_context_from_json(j.at("evidence_context"));
    r.unlinked_names = j.at("unlinked_names").get<std::vector<std::string>>();
    r.evolution_events = j.at("evolution_events").get<std::vector<std::string>>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

namespace {

void record_context_usage(GraphStore& store, const EvidenceContext& context) {
    std::set<TripleKey> keys;
    for (const auto& cc : context.candidates) keys.insert(cc.triples.begin(), cc.triples.end());
    if (keys.empty()) return;
    const std::vector<TripleKey> list(keys.begin(), keys.end());
    store.record_usage(list);
}

void rank_into(DiagnosisRecord& record, const std::string& history_text, const KnowledgeGraph& graph,
               Gateway& gateway, const DiagnosisConfig& config) {
    if (record.combined.empty()) {
        record.warnings.push_back("no candidate diagnoses could be formed");
        record.candidates.clear();
        return;
    }
    auto ranked = rank_and_select(history_text, graph, record.evidence_context, record.combined, gateway, config.k);
    record.combined = std::move(ranked.ranked);
    record.candidates = std::move(ranked.selected);
    record.warnings.insert(record.warnings.end(), ranked.warnings.begin(), ranked.warnings.end());
}

} // namespace

DiagnosisRecord run_diagnosis(const HistoryExport& history, PipelineDeps deps, const DiagnosisConfig& config) {
    validate(config);
    const auto snapshot = deps.store.snapshot();
    const auto& graph = *snapshot;
    const auto history_text = render_history_text(history.history);

    DiagnosisRecord record;
    const auto mentions = recognize_symptoms(history_text, deps.gateway);
    const auto symptom_index = build_index(graph, deps.embedder, EntityKind::symptom);
    const auto disease_index = build_index(graph, deps.embedder, EntityKind::disease);
    record.symptoms = link_symptoms(mentions, symptom_index, config.linker);
    for (const auto& l : record.symptoms.links) {
        if (!l.matched) record.warnings.push_back("symptom '" + l.mention + "' did not link to the graph");
    }

    record.kg_top = kg_candidates(graph, record.symptoms.linked, config.kg_top);
    auto combined = combine_candidates(graph, record.kg_top, history.preliminary_ddx, disease_index,
                                       record.symptoms.linked, config.linker);
    record.combined = std::move(combined.candidates);
    record.unlinked_names = std::move(combined.unlinked_names);

    if (deps.worklist) {
        std::vector<DiseaseRef> refs;
        for (const auto& c : record.combined) refs.push_back({c.name, c.disease_id});
        for (const auto& n : record.unlinked_names) refs.push_back({n, std::nullopt});
        for (const auto& e : deps.worklist->detect(graph, refs, deps.evolution, deps.clock.now())) {
            record.evolution_events.push_back(e.id);
        }
    }
    for (const auto& n : record.unlinked_names) {
        record.warnings.push_back("'" + n + "' is not in the knowledge graph; excluded pending evolution");
    }

    record.evidence_context =
        build_evidence_context(graph, record.combined, record.symptoms.linked, symptom_index, config);
    rank_into(record, history_text, graph, deps.gateway, config);
    record_context_usage(deps.store, record.evidence_context);
    return record;
}

DiagnosisRecord rerank_diagnosis(const std::string& history_text, const DiagnosisRecord& previous,
                                 PipelineDeps deps, const DiagnosisConfig& config) {
    validate(config);
    const auto snapshot = deps.store.snapshot();
    const auto& graph = *snapshot;

    DiagnosisRecord record;
    record.kg_top = previous.kg_top;
    record.unlinked_names = previous.unlinked_names;
    record.evolution_events = previous.evolution_events;

    const auto symptom_index = build_index(graph, deps.embedder, EntityKind::symptom);
    record.symptoms = link_symptoms(recognize_symptoms(history_text, deps.gateway), symptom_index, config.linker);
    for (const auto& c : previous.combined) {
        if (!graph.contains(c.disease_id)) continue;
        auto updated = make_candidate(graph, graph.entity(c.disease_id), record.symptoms.linked, c.source);
        record.combined.push_back(std::move(updated));
    }
    record.evidence_context =
        build_evidence_context(graph, record.combined, record.symptoms.linked, symptom_index, config);
    rank_into(record, history_text, graph, deps.gateway, config);
    record_context_usage(deps.store, record.evidence_context);
    return record;
}

} // namespace kgdx
