#pragma once

#include "kgdx/config.hpp"
#include "kgdx/kg_store.hpp"
#include "kgdx/linker.hpp"
#include "kgdx/llm_gateway.hpp"
#include "kgdx/service.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace kgdx::test {

// ---------------------------------------------------------------------------
// Oracles. Deliberately naive and independent of the library's graph index.

// All-pairs hop distances over the undirected triple list (Floyd-Warshall).
class DistanceOracle {
public:
    explicit DistanceOracle(const KnowledgeGraph& graph);
    std::optional<std::size_t> distance(const std::string& a, const std::string& b) const;

private:
    std::map<std::string, std::size_t> index_;
    std::vector<std::vector<std::size_t>> dist_;
};

// Sum of 1/distance over distinct linked symptoms; unreachable adds nothing.
double oracle_kg_score(const DistanceOracle& oracle, const std::string& disease,
                       const std::vector<std::string>& linked);

struct OracleMatch {
    std::optional<std::string> id;
    double similarity = -1.0;
};

// Linear scan over (id, name) pairs: highest cosine of unit vectors, ties to
// the smallest id, matched only at or above the threshold.
OracleMatch oracle_link(const std::string& mention, const std::vector<std::pair<std::string, std::string>>& entities,
                        const EmbeddingProvider& provider, double threshold);

// ---------------------------------------------------------------------------
// Generators.

struct RandomGraphSpec {
    std::size_t max_nodes = 50;
    std::size_t max_linked = 8;
    double edge_factor = 1.4;  // edges ≈ factor × nodes
};

struct RandomCase {
    KnowledgeGraph graph;
    std::vector<std::string> diseases;
    std::vector<std::string> symptoms;
    std::vector<std::string> linked;
};

// Mixed disease/symptom/drug/other graph, possibly disconnected, with a
// random subset of symptoms marked as linked.
RandomCase random_case(std::mt19937_64& rng, const RandomGraphSpec& spec = {});

// Pseudo-words built from a fixed syllable table.
std::string random_name(std::mt19937_64& rng, std::size_t min_words = 1, std::size_t max_words = 3);

// ---------------------------------------------------------------------------
// Fixtures.

KnowledgeGraph fixture_graph();
std::filesystem::path scenarios_dir();
std::vector<std::filesystem::path> scenario_files();

// Minimal graph: two diseases sharing one symptom plus a drug and a definition.
KnowledgeGraph tiny_graph();

Entity make_entity(std::string id, std::string name, EntityKind kind, std::optional<int> severity = {});
Triple make_triple(std::string s, std::string r, std::string o, std::uint64_t usage = 1,
                   std::optional<std::string> reviewed_at = "2025-09-15T00:00:00Z");

ScriptEntry entry(TemplateId id, std::string response);

// Scoped scratch directory under the system temp dir.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline const Caller kPatient{Role::patient, "patient-1"};
inline const Caller kOtherPatient{Role::patient, "patient-2"};
inline const Caller kPhysician{Role::physician, "dr-lee"};
inline const Caller kOtherPhysician{Role::physician, "dr-park"};
inline const Caller kExpert{Role::expert, "expert-kim"};

struct ServiceHarness {
    std::shared_ptr<ManualClock> clock;
    std::shared_ptr<ScriptedMockProvider> provider;
    std::unique_ptr<Service> service;
};

// Service over `graph` driven by a single scripted provider and a manual clock
// that ticks one second per read. Sessions persist when `sessions_dir` is set.
ServiceHarness make_service(KnowledgeGraph graph, std::vector<ScriptEntry> script,
                            std::optional<std::filesystem::path> sessions_dir = {},
                            std::shared_ptr<GraphStore> store = {}, std::shared_ptr<Worklist> worklist = {});

// Script of the bundled eye-strain pack.
std::vector<ScriptEntry> eye_strain_script();
std::vector<std::string> eye_strain_utterances();

} // namespace kgdx::test
