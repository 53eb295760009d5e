#pragma once

#include "kgdx/common.hpp"
#include "kgdx/json_util.hpp"

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace kgdx {

enum class EntityKind { disease, symptom, drug, definition, other };

std::string_view to_string(EntityKind kind);
EntityKind entity_kind_from_string(std::string_view text);

struct Entity {
    std::string id;
    std::string name;
    EntityKind kind = EntityKind::other;
    std::optional<std::string> definition_text;
    std::optional<int> severity;  // diseases only, 0..10
    std::optional<std::vector<double>> embedding;
    // Last expert-reviewed evolution of a disease subgraph.
    std::optional<Timestamp> last_evolution;

    bool operator==(const Entity&) const = default;
};

enum class ProvenanceSource { seed_import, llm_draft, expert_edit };

std::string_view to_string(ProvenanceSource source);
ProvenanceSource provenance_source_from_string(std::string_view text);

struct Provenance {
    ProvenanceSource source = ProvenanceSource::seed_import;
    std::optional<std::string> reviewer;
    std::optional<Timestamp> reviewed_at;

    bool operator==(const Provenance&) const = default;
};

struct TripleKey {
    std::string subject;
    std::string relation;
    std::string object;

    auto operator<=>(const TripleKey&) const = default;
    bool operator==(const TripleKey&) const = default;

    // "subject|relation|object"
    std::string str() const;
    static TripleKey parse(std::string_view text);
};

struct TripleKeyHash {
    std::size_t operator()(const TripleKey& k) const noexcept;
};

struct Triple {
    std::string subject;
    std::string relation;
    std::string object;
    Provenance provenance;
    std::uint64_t usage_count = 0;
    std::optional<Timestamp> created_at;

    TripleKey key() const { return {subject, relation, object}; }
    const std::string& other_end(const std::string& id) const {
        return subject == id ? object : subject;
    }

    bool operator==(const Triple&) const = default;
};

struct Neighbor {
    Triple triple;
    Entity entity;
};

struct MergeBatch {
    std::vector<Entity> entities;
    std::vector<Triple> triples;
};

struct MergeDiff {
    std::vector<Entity> added_entities;
    std::vector<Triple> added;
    std::vector<Triple> skipped;

    bool operator==(const MergeDiff&) const = default;
};

// Typed entities plus provenance-stamped triples. Value type: copies are
// independent snapshots. Not internally synchronized; see GraphStore.
class KnowledgeGraph {
public:
    void add_entity(Entity entity);
    void add_triple(Triple triple);

    const Entity* find(const std::string& id) const;
    const Entity& entity(const std::string& id) const;
    bool contains(const std::string& id) const { return find(id) != nullptr; }
    // Case/punctuation-insensitive name lookup; the earliest inserted match wins.
    const Entity* find_by_name(std::string_view name) const;

    const std::vector<Entity>& entities() const { return entities_; }
    const std::vector<Triple>& triples() const { return triples_; }
    std::vector<const Entity*> entities_of_kind(EntityKind kind) const;

    const Triple* find_triple(const TripleKey& key) const;
    bool contains(const TripleKey& key) const { return find_triple(key) != nullptr; }

    // Triples incident to `id` (either direction) whose far endpoint matches
    // the filter, ordered by (relation, far endpoint id).
    std::vector<Neighbor> one_hop_neighbors(const std::string& id,
                                            std::optional<EntityKind> kind_filter = {}) const;
    std::vector<const Triple*> incident_triples(const std::string& id) const;
    // Smallest key among triples joining a and b in either direction.
    std::optional<TripleKey> edge_between(const std::string& a, const std::string& b) const;
    // Undirected neighbor ids, sorted ascending, without duplicates.
    std::vector<std::string> neighbor_ids(const std::string& id) const;

    std::optional<std::size_t> shortest_path_distance(const std::string& a,
                                                      const std::string& b) const;
    // Minimal path a..b; among equal-length paths the lexicographically
    // smallest id sequence.
    std::optional<std::vector<std::string>> shortest_path(const std::string& a,
                                                          const std::string& b) const;
    // Undirected BFS distances from `source` to every reachable entity.
    std::unordered_map<std::string, std::size_t> distances_from(const std::string& source) const;

    // All-or-nothing. Triples already present (and repeats within the batch)
    // are reported as skipped; entities whose id already exists are kept as is.
    MergeDiff merge(const MergeBatch& batch, std::optional<Timestamp> created_at = {});

    // Each distinct key is bumped once; unknown keys are ignored.
    void record_usage(std::span<const TripleKey> keys);
    void set_last_evolution(const std::string& disease_id, Timestamp at);
    // Journal replay; counts may only grow.
    void set_usage_count(const TripleKey& key, std::uint64_t count);

    // Rebuilds the adjacency index from the triple list and compares.
    bool adjacency_consistent() const;

    bool operator==(const KnowledgeGraph& other) const {
        return entities_ == other.entities_ && triples_ == other.triples_;
    }

private:
    void index_triple(std::size_t idx);
    std::unordered_map<std::string, std::vector<std::size_t>> build_adjacency() const;

    std::vector<Entity> entities_;
    std::unordered_map<std::string, std::size_t> entity_index_;
    std::vector<Triple> triples_;
    std::unordered_map<TripleKey, std::size_t, TripleKeyHash> triple_index_;
    std::unordered_map<std::string, std::vector<std::size_t>> adjacency_;
};

Json entity_to_json(const Entity& e);
Entity entity_from_json(const Json& j);
Json triple_to_json(const Triple& t);
Triple triple_from_json(const Json& j);
Json merge_diff_to_json(const MergeDiff& diff);
MergeDiff merge_diff_from_json(const Json& j);

// Line-delimited JSON node and edge records. Errors name the offending line.
KnowledgeGraph import_graph(std::istream& nodes, std::istream& edges);
void export_graph(const KnowledgeGraph& graph, std::ostream& nodes, std::ostream& edges);

KnowledgeGraph import_graph_files(const std::string& nodes_path, const std::string& edges_path);
void export_graph_files(const KnowledgeGraph& graph, const std::string& nodes_path,
                        const std::string& edges_path);

} // namespace kgdx
