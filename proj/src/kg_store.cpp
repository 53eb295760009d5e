#include "kgdx/kg_store.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <unordered_set>

namespace kgdx {

std::string_view to_string(EntityKind kind) {
    switch (kind) {
        case EntityKind::disease: return "disease";
        case EntityKind::symptom: return "symptom";
        case EntityKind::drug: return "drug";
        case EntityKind::definition: return "definition";
        case EntityKind::other: return "other";
    }
    return "other";
}

EntityKind entity_kind_from_string(std::string_view text) {
    if (text == "disease") return EntityKind::disease;
    if (text == "symptom") return EntityKind::symptom;
    if (text == "drug") return EntityKind::drug;
    if (text == "definition") return EntityKind::definition;
    if (text == "other") return EntityKind::other;
    throw Error(ErrorCode::invalid_argument, "unknown entity kind '" + std::string(text) + "'");
}

std::string_view to_string(ProvenanceSource source) {
    switch (source) {
        case ProvenanceSource::seed_import: return "seed_import";
        case ProvenanceSource::llm_draft: return "llm_draft";
        case ProvenanceSource::expert_edit: return "expert_edit";
    }
    return "seed_import";
}

ProvenanceSource provenance_source_from_string(std::string_view text) {
    if (text == "seed_import") return ProvenanceSource::seed_import;
    if (text == "llm_draft") return ProvenanceSource::llm_draft;
    if (text == "expert_edit") return ProvenanceSource::expert_edit;
    throw Error(ErrorCode::invalid_argument, "unknown provenance source '" + std::string(text) + "'");
}

std::string TripleKey::str() const { return subject + "|" + relation + "|" + object; }

TripleKey TripleKey::parse(std::string_view text) {
    const auto p1 = text.find('|');
    const auto p2 = p1 == std::string_view::npos ? p1 : text.find('|', p1 + 1);
    if (p2 == std::string_view::npos || text.find('|', p2 + 1) != std::string_view::npos) {
        throw Error(ErrorCode::invalid_argument, "expected subject|relation|object, got '" +
                                                     std::string(text) + "'");
    }
    return {trim(text.substr(0, p1)), trim(text.substr(p1 + 1, p2 - p1 - 1)),
            trim(text.substr(p2 + 1))};
}

std::size_t TripleKeyHash::operator()(const TripleKey& k) const noexcept {
    std::hash<std::string> h;
    std::size_t seed = h(k.subject);
    seed ^= h(k.relation) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2);
    seed ^= h(k.object) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2);
    return seed;
}

namespace {

void check_entity(const Entity& e) {
    if (e.id.empty()) throw Error(ErrorCode::invalid_argument, "entity id must not be empty");
    if (e.severity) {
        if (e.kind != EntityKind::disease) {
            throw Error(ErrorCode::invalid_argument, "severity on non-disease entity '" + e.id + "'");
        }
        if (*e.severity < 0 || *e.severity > 10) {
            throw Error(ErrorCode::invalid_argument, "severity out of range on '" + e.id + "'");
        }
    }
}

} // namespace

void KnowledgeGraph::add_entity(Entity entity) {
    check_entity(entity);
    if (entity_index_.count(entity.id)) {
        throw Error(ErrorCode::conflict, "duplicate entity id '" + entity.id + "'");
    }
    entity_index_.emplace(entity.id, entities_.size());
    entities_.push_back(std::move(entity));
}

void KnowledgeGraph::add_triple(Triple triple) {
    if (!contains(triple.subject) || !contains(triple.object)) {
        throw Error(ErrorCode::invalid_argument, "dangling triple '" + triple.key().str() + "'");
    }
    if (triple.relation.empty()) {
        throw Error(ErrorCode::invalid_argument, "empty relation on '" + triple.key().str() + "'");
    }
    auto key = triple.key();
    if (triple_index_.count(key)) {
        throw Error(ErrorCode::conflict, "duplicate triple '" + key.str() + "'");
    }
    triple_index_.emplace(std::move(key), triples_.size());
    triples_.push_back(std::move(triple));
    index_triple(triples_.size() - 1);
}

void KnowledgeGraph::index_triple(std::size_t idx) {
    const auto& t = triples_[idx];
    adjacency_[t.subject].push_back(idx);
    if (t.object != t.subject) adjacency_[t.object].push_back(idx);
}

const Entity* KnowledgeGraph::find(const std::string& id) const {
    auto it = entity_index_.find(id);
    return it == entity_index_.end() ? nullptr : &entities_[it->second];
}

const Entity& KnowledgeGraph::entity(const std::string& id) const {
    if (const auto* e = find(id)) return *e;
    throw Error(ErrorCode::not_found, "unknown entity '" + id + "'");
}

const Entity* KnowledgeGraph::find_by_name(std::string_view name) const {
    const auto wanted = normalize_text(name);
    if (wanted.empty()) return nullptr;
    for (const auto& e : entities_) {
        if (normalize_text(e.name) == wanted) return &e;
    }
    return nullptr;
}

std::vector<const Entity*> KnowledgeGraph::entities_of_kind(EntityKind kind) const {
    std::vector<const Entity*> out;
    for (const auto& e : entities_) {
        if (e.kind == kind) out.push_back(&e);
    }
    return out;
}

const Triple* KnowledgeGraph::find_triple(const TripleKey& key) const {
    auto it = triple_index_.find(key);
    return it == triple_index_.end() ? nullptr : &triples_[it->second];
}

std::vector<const Triple*> KnowledgeGraph::incident_triples(const std::string& id) const {
    entity(id);
    std::vector<const Triple*> out;
    if (auto it = adjacency_.find(id); it != adjacency_.end()) {
        for (auto idx : it->second) out.push_back(&triples_[idx]);
    }
    return out;
}

std::optional<TripleKey> KnowledgeGraph::edge_between(const std::string& a, const std::string& b) const {
    std::optional<TripleKey> best;
    for (const auto* t : incident_triples(a)) {
        if (t->other_end(a) != b) continue;
        if (!best || t->key() < *best) best = t->key();
    }
    return best;
}

std::vector<Neighbor> KnowledgeGraph::one_hop_neighbors(const std::string& id,
                                                        std::optional<EntityKind> kind_filter) const {
    std::vector<Neighbor> out;
    for (const auto* t : incident_triples(id)) {
        const auto& far = entity(t->other_end(id));
        if (kind_filter && far.kind != *kind_filter) continue;
        out.push_back({*t, far});
    }
    std::sort(out.begin(), out.end(), [&](const Neighbor& a, const Neighbor& b) {
        if (a.triple.relation != b.triple.relation) return a.triple.relation < b.triple.relation;
        if (a.entity.id != b.entity.id) return a.entity.id < b.entity.id;
        // Same relation and endpoint in both directions: subject-first wins.
        return a.triple.subject < b.triple.subject;
    });
    return out;
}

std::vector<std::string> KnowledgeGraph::neighbor_ids(const std::string& id) const {
    std::vector<std::string> out;
    if (auto it = adjacency_.find(id); it != adjacency_.end()) {
        for (auto idx : it->second) {
            const auto& other = triples_[idx].other_end(id);
            if (other != id) out.push_back(other);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::unordered_map<std::string, std::size_t> KnowledgeGraph::distances_from(
    const std::string& source) const {
    entity(source);
    std::unordered_map<std::string, std::size_t> dist{{source, 0}};
    std::deque<std::string> queue{source};
    while (!queue.empty()) {
        auto current = std::move(queue.front());
        queue.pop_front();
        const auto d = dist[current];
        if (auto it = adjacency_.find(current); it != adjacency_.end()) {
            for (auto idx : it->second) {
                const auto& next = triples_[idx].other_end(current);
                if (dist.emplace(next, d + 1).second) queue.push_back(next);
            }
        }
    }
    return dist;
}

std::optional<std::size_t> KnowledgeGraph::shortest_path_distance(const std::string& a,
                                                                  const std::string& b) const {
    entity(b);
    const auto dist = distances_from(a);
    auto it = dist.find(b);
    if (it == dist.end()) return std::nullopt;
    return it->second;
}

std::optional<std::vector<std::string>> KnowledgeGraph::shortest_path(const std::string& a,
                                                                      const std::string& b) const {
    entity(a);
    // Distances to b, then walk greedily from a through the smallest id that
    // stays on a shortest path; this yields the lexicographically smallest
    // sequence among all minimal paths.
    const auto to_b = distances_from(b);
    auto it = to_b.find(a);
    if (it == to_b.end()) return std::nullopt;
    std::vector<std::string> path{a};
    std::size_t remaining = it->second;
    while (remaining > 0) {
        for (const auto& next : neighbor_ids(path.back())) {
            auto nd = to_b.find(next);
            if (nd != to_b.end() && nd->second == remaining - 1) {
                path.push_back(next);
                break;
            }
        }
        --remaining;
    }
    return path;
}

MergeDiff KnowledgeGraph::merge(const MergeBatch& batch, std::optional<Timestamp> created_at) {
    // Validate everything before touching state.
    std::unordered_map<std::string, const Entity*> staged;
    for (const auto& e : batch.entities) {
        check_entity(e);
        const Entity* existing = find(e.id);
        if (!existing) {
            auto [it, inserted] = staged.emplace(e.id, &e);
            existing = inserted ? nullptr : it->second;
        }
        if (existing && existing->kind != e.kind) {
            throw Error(ErrorCode::conflict, "entity '" + e.id + "' already exists as " +
                                                 std::string(to_string(existing->kind)));
        }
    }
    for (const auto& t : batch.triples) {
        for (const auto* id : {&t.subject, &t.object}) {
            if (!contains(*id) && !staged.count(*id)) {
                throw Error(ErrorCode::invalid_argument,
                            "merge rejected: triple '" + t.key().str() +
                                "' references unknown entity '" + *id + "'");
            }
        }
        if (t.relation.empty()) {
            throw Error(ErrorCode::invalid_argument, "merge rejected: empty relation");
        }
    }

    MergeDiff diff;
    std::unordered_set<std::string> added_ids;
    for (const auto& e : batch.entities) {
        if (contains(e.id) || !added_ids.insert(e.id).second) continue;
        add_entity(e);
        diff.added_entities.push_back(e);
    }
    for (const auto& t : batch.triples) {
        if (contains(t.key())) {
            diff.skipped.push_back(t);
            continue;
        }
        Triple copy = t;
        if (!copy.created_at) copy.created_at = created_at;
        add_triple(copy);
        diff.added.push_back(std::move(copy));
    }
    return diff;
}

void KnowledgeGraph::record_usage(std::span<const TripleKey> keys) {
    std::unordered_set<TripleKey, TripleKeyHash> seen;
    for (const auto& k : keys) {
        if (!seen.insert(k).second) continue;
        if (auto it = triple_index_.find(k); it != triple_index_.end()) {
            ++triples_[it->second].usage_count;
        }
    }
}

void KnowledgeGraph::set_last_evolution(const std::string& disease_id, Timestamp at) {
    auto it = entity_index_.find(disease_id);
    if (it == entity_index_.end()) {
        throw Error(ErrorCode::not_found, "unknown entity '" + disease_id + "'");
    }
    entities_[it->second].last_evolution = at;
}

void KnowledgeGraph::set_usage_count(const TripleKey& key, std::uint64_t count) {
    auto it = triple_index_.find(key);
    if (it == triple_index_.end()) {
        throw Error(ErrorCode::not_found, "unknown triple '" + key.str() + "'");
    }
    auto& current = triples_[it->second].usage_count;
    if (count < current) {
        throw Error(ErrorCode::invalid_argument, "usage_count may not decrease on '" + key.str() + "'");
    }
    current = count;
}

std::unordered_map<std::string, std::vector<std::size_t>> KnowledgeGraph::build_adjacency() const {
    std::unordered_map<std::string, std::vector<std::size_t>> adj;
    for (std::size_t i = 0; i < triples_.size(); ++i) {
        adj[triples_[i].subject].push_back(i);
        if (triples_[i].object != triples_[i].subject) adj[triples_[i].object].push_back(i);
    }
    return adj;
}

bool KnowledgeGraph::adjacency_consistent() const {
    auto fresh = build_adjacency();
    auto normalize = [](std::unordered_map<std::string, std::vector<std::size_t>> m) {
        std::map<std::string, std::vector<std::size_t>> out;
        for (auto& [k, v] : m) {
            if (v.empty()) continue;
            std::sort(v.begin(), v.end());
            out.emplace(k, std::move(v));
        }
        return out;
    };
    return normalize(fresh) == normalize(adjacency_);
}

// ---------------------------------------------------------------------------
// JSON records

Json entity_to_json(const Entity& e) {
    Json j = {{"id", e.id}, {"name", e.name}, {"kind", to_string(e.kind)}};
    if (e.definition_text) j["definition_text"] = *e.definition_text;
    if (e.severity) j["severity"] = *e.severity;
    if (e.embedding) j["embedding"] = *e.embedding;
    if (e.last_evolution) j["last_evolution"] = format_rfc3339(*e.last_evolution);
    return j;
}

Entity entity_from_json(const Json& j) {
    Entity e;
    e.id = j.at("id").get<std::string>();
    e.name = j.at("name").get<std::string>();
    e.kind = entity_kind_from_string(j.at("kind").get<std::string>());
    e.definition_text = optional_field<std::string>(j, "definition_text");
    e.severity = optional_field<int>(j, "severity");
    e.embedding = optional_field<std::vector<double>>(j, "embedding");
    if (auto ts = optional_field<std::string>(j, "last_evolution")) e.last_evolution = parse_rfc3339(*ts);
    check_entity(e);
    return e;
}

Json triple_to_json(const Triple& t) {
    Json prov = {{"source", to_string(t.provenance.source)}};
    if (t.provenance.reviewer) prov["reviewer"] = *t.provenance.reviewer;
    if (t.provenance.reviewed_at) prov["reviewed_at"] = format_rfc3339(*t.provenance.reviewed_at);
    Json j = {{"subject", t.subject},
              {"relation", t.relation},
              {"object", t.object},
              {"provenance", prov},
              {"usage_count", t.usage_count}};
    if (t.created_at) j["created_at"] = format_rfc3339(*t.created_at);
    return j;
}

Triple triple_from_json(const Json& j) {
    Triple t;
    t.subject = j.at("subject").get<std::string>();
    t.relation = j.at("relation").get<std::string>();
    t.object = j.at("object").get<std::string>();
    if (auto it = j.find("provenance"); it != j.end()) {
        t.provenance.source = provenance_source_from_string(it->at("source").get<std::string>());
        t.provenance.reviewer = optional_field<std::string>(*it, "reviewer");
        if (auto ts = optional_field<std::string>(*it, "reviewed_at")) {
            t.provenance.reviewed_at = parse_rfc3339(*ts);
        }
    } else {
        throw Error(ErrorCode::invalid_argument, "edge record missing provenance");
    }
    t.usage_count = optional_field<std::uint64_t>(j, "usage_count").value_or(0);
    if (auto ts = optional_field<std::string>(j, "created_at")) t.created_at = parse_rfc3339(*ts);
    return t;
}

Json merge_diff_to_json(const MergeDiff& diff) {
    Json j = {{"added_entities", Json::array()}, {"added", Json::array()}, {"skipped", Json::array()}};
    for (const auto& e : diff.added_entities) j["added_entities"].push_back(entity_to_json(e));
    for (const auto& t : diff.added) j["added"].push_back(triple_to_json(t));
    for (const auto& t : diff.skipped) j["skipped"].push_back(triple_to_json(t));
    return j;
}

MergeDiff merge_diff_from_json(const Json& j) {
    MergeDiff diff;
    for (const auto& e : j.at("added_entities")) diff.added_entities.push_back(entity_from_json(e));
    for (const auto& t : j.at("added")) diff.added.push_back(triple_from_json(t));
    for (const auto& t : j.at("skipped")) diff.skipped.push_back(triple_from_json(t));
    return diff;
}

namespace {

template <typename Fn>
void for_each_record(std::istream& in, const char* what, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            fn(Json::parse(line));
        } catch (const Json::exception& e) {
            throw Error(ErrorCode::invalid_argument,
                        std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(e.code() == ErrorCode::conflict ? ErrorCode::conflict
                                                        : ErrorCode::invalid_argument,
                        std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

} // namespace

KnowledgeGraph import_graph(std::istream& nodes, std::istream& edges) {
    KnowledgeGraph graph;
    for_each_record(nodes, "nodes", [&](const Json& j) { graph.add_entity(entity_from_json(j)); });
    for_each_record(edges, "edges", [&](const Json& j) { graph.add_triple(triple_from_json(j)); });
    return graph;
}

void export_graph(const KnowledgeGraph& graph, std::ostream& nodes, std::ostream& edges) {
    for (const auto& e : graph.entities()) nodes << entity_to_json(e).dump() << '\n';
    for (const auto& t : graph.triples()) edges << triple_to_json(t).dump() << '\n';
}

KnowledgeGraph import_graph_files(const std::string& nodes_path, const std::string& edges_path) {
    std::ifstream nodes(nodes_path);
    if (!nodes) throw Error(ErrorCode::io, "cannot open " + nodes_path);
    std::ifstream edges(edges_path);
    if (!edges) throw Error(ErrorCode::io, "cannot open " + edges_path);
    return import_graph(nodes, edges);
}

void export_graph_files(const KnowledgeGraph& graph, const std::string& nodes_path,
                        const std::string& edges_path) {
    std::ofstream nodes(nodes_path, std::ios::trunc);
    std::ofstream edges(edges_path, std::ios::trunc);
    if (!nodes || !edges) throw Error(ErrorCode::io, "cannot write graph files");
    export_graph(graph, nodes, edges);
}

} // namespace kgdx
