#include "kgdx/graph_store.hpp"

#include <spdlog/spdlog.h>

#include <fstream>

namespace kgdx {

namespace fs = std::filesystem;

GraphStore::GraphStore(KnowledgeGraph initial)
    : graph_(std::make_shared<const KnowledgeGraph>(std::move(initial))) {}

void GraphStore::create(const fs::path& dir, const KnowledgeGraph& graph) {
    fs::create_directories(dir);
    export_graph_files(graph, (dir / "nodes.jsonl").string(), (dir / "edges.jsonl").string());
    std::ofstream(dir / "journal.jsonl", std::ios::trunc);
}

std::unique_ptr<GraphStore> GraphStore::open(const fs::path& dir) {
    if (!fs::exists(dir / "nodes.jsonl")) create(dir, KnowledgeGraph{});
    auto graph = import_graph_files((dir / "nodes.jsonl").string(), (dir / "edges.jsonl").string());

    std::uint64_t version = 0;
    const auto journal = dir / "journal.jsonl";
    if (std::ifstream in(journal); in) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            try {
                const auto record = Json::parse(line);
                apply_graph_delta(graph, record.at("delta"));
                version = record.at("seq").get<std::uint64_t>();
            } catch (const std::exception& e) {
                throw Error(ErrorCode::io, "corrupted journal " + journal.string() + " record " +
                                               std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    auto store = std::make_unique<GraphStore>(std::move(graph));
    store->version_ = version;
    store->dir_ = dir;
    return store;
}

std::shared_ptr<const KnowledgeGraph> GraphStore::snapshot() const {
    std::shared_lock lock(ptr_mutex_);
    return graph_;
}

std::uint64_t GraphStore::version() const {
    std::shared_lock lock(ptr_mutex_);
    return version_;
}

void GraphStore::update(const std::function<void(KnowledgeGraph&)>& fn) {
    std::lock_guard writer(writer_mutex_);
    auto current = snapshot();
    auto next = std::make_shared<KnowledgeGraph>(*current);
    fn(*next);
    auto delta = graph_delta(*current, *next);
    if (dir_) append_journal({{"seq", version_ + 1}, {"delta", std::move(delta)}});
    std::unique_lock lock(ptr_mutex_);
    graph_ = std::move(next);
    ++version_;
}

MergeDiff GraphStore::merge(const MergeBatch& batch, Timestamp now) {
    MergeDiff diff;
    update([&](KnowledgeGraph& g) { diff = g.merge(batch, now); });
    return diff;
}

void GraphStore::record_usage(std::span<const TripleKey> keys) {
    update([&](KnowledgeGraph& g) { g.record_usage(keys); });
}

void GraphStore::compact() {
    if (!dir_) return;
    std::lock_guard writer(writer_mutex_);
    auto current = snapshot();
    const auto tmp = *dir_ / "compact.tmp";
    fs::create_directories(tmp);
    export_graph_files(*current, (tmp / "nodes.jsonl").string(), (tmp / "edges.jsonl").string());
    fs::rename(tmp / "nodes.jsonl", *dir_ / "nodes.jsonl");
    fs::rename(tmp / "edges.jsonl", *dir_ / "edges.jsonl");
    fs::remove_all(tmp);
    std::ofstream(*dir_ / "journal.jsonl", std::ios::trunc);
}

void GraphStore::append_journal(const Json& record) {
    std::ofstream out(*dir_ / "journal.jsonl", std::ios::app);
    if (!out) throw Error(ErrorCode::io, "cannot append to journal in " + dir_->string());
    out << record.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::io, "journal write failed in " + dir_->string());
}

Json graph_delta(const KnowledgeGraph& before, const KnowledgeGraph& after) {
    Json delta = {{"added_entities", Json::array()},
                  {"added_triples", Json::array()},
                  {"usage", Json::object()},
                  {"last_evolution", Json::object()}};
    const auto& old_entities = before.entities();
    const auto& new_entities = after.entities();
    for (std::size_t i = 0; i < new_entities.size(); ++i) {
        if (i >= old_entities.size()) {
            delta["added_entities"].push_back(entity_to_json(new_entities[i]));
        } else if (new_entities[i].last_evolution != old_entities[i].last_evolution &&
                   new_entities[i].last_evolution) {
            delta["last_evolution"][new_entities[i].id] =
                format_rfc3339(*new_entities[i].last_evolution);
        }
    }
    const auto& old_triples = before.triples();
    const auto& new_triples = after.triples();
    for (std::size_t i = 0; i < new_triples.size(); ++i) {
        if (i >= old_triples.size()) {
            delta["added_triples"].push_back(triple_to_json(new_triples[i]));
        } else if (new_triples[i].usage_count != old_triples[i].usage_count) {
            delta["usage"][new_triples[i].key().str()] = new_triples[i].usage_count;
        }
    }
    return delta;
}

void apply_graph_delta(KnowledgeGraph& graph, const Json& delta) {
    for (const auto& e : delta.at("added_entities")) graph.add_entity(entity_from_json(e));
    for (const auto& t : delta.at("added_triples")) graph.add_triple(triple_from_json(t));
    for (const auto& [key, count] : delta.at("usage").items()) {
        graph.set_usage_count(TripleKey::parse(key), count.get<std::uint64_t>());
    }
    for (const auto& [id, ts] : delta.at("last_evolution").items()) {
        graph.set_last_evolution(id, parse_rfc3339(ts.get<std::string>()));
    }
}

} // namespace kgdx
