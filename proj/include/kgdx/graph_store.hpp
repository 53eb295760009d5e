#pragma once

#include "kgdx/kg_store.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <shared_mutex>

namespace kgdx {

// Live graph shared across sessions. Readers take immutable snapshots;
// writers copy, mutate, journal and swap under an exclusive lock.
//
// On-disk layout of a store directory:
//   nodes.jsonl, edges.jsonl   base snapshot (import/export format)
//   journal.jsonl              one record per committed update
class GraphStore {
public:
    explicit GraphStore(KnowledgeGraph initial = {});

    // Loads base files and replays the journal. A missing directory yields an
    // empty store that persists there.
    static std::unique_ptr<GraphStore> open(const std::filesystem::path& dir);
    // Writes `graph` as the base snapshot of a fresh store directory.
    static void create(const std::filesystem::path& dir, const KnowledgeGraph& graph);

    std::shared_ptr<const KnowledgeGraph> snapshot() const;
    std::uint64_t version() const;

    // Runs `fn` on a private copy; on success the change set is journaled and
    // the copy becomes the live graph. Exceptions leave the store untouched.
    void update(const std::function<void(KnowledgeGraph&)>& fn);

    MergeDiff merge(const MergeBatch& batch, Timestamp now);
    void record_usage(std::span<const TripleKey> keys);

    // Folds the journal into the base snapshot.
    void compact();

    const std::optional<std::filesystem::path>& directory() const { return dir_; }

private:
    void append_journal(const Json& record);

    mutable std::shared_mutex ptr_mutex_;
    std::mutex writer_mutex_;
    std::shared_ptr<const KnowledgeGraph> graph_;
    std::uint64_t version_ = 0;
    std::optional<std::filesystem::path> dir_;
};

// Change set between a graph and a grown copy of it (graphs never shrink).
Json graph_delta(const KnowledgeGraph& before, const KnowledgeGraph& after);
void apply_graph_delta(KnowledgeGraph& graph, const Json& delta);

} // namespace kgdx
