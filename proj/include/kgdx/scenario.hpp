#pragma once

#include "kgdx/config.hpp"
#include "kgdx/evidence.hpp"
#include "kgdx/kg_store.hpp"
#include "kgdx/linker.hpp"
#include "kgdx/llm_gateway.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace kgdx {

// A scripted patient plus the model responses that drive one full case.
struct ScenarioPack {
    std::string id;
    std::string description;
    std::vector<std::string> patient_script;
    std::vector<ScriptEntry> llm_script;
    std::string ground_truth;
    std::vector<std::string> acceptable_differentials;
    // Physician sign-off on the top-ranked diagnosis; skipped when absent.
    std::optional<FinalizeFields> finalize;
    // Diseases whose evolution events the expert drafts and approves.
    std::vector<std::string> approve_evolution;
};

void validate(const ScenarioPack& pack);
ScenarioPack scenario_pack_from_json(const Json& j);
Json to_json(const ScenarioPack& pack);
ScenarioPack load_pack(const std::filesystem::path& path);

struct PackMetrics {
    std::string id;
    bool ok = false;
    std::optional<std::string> error;
    bool top1_hit = false;
    bool top3_hit = false;
    int turns = 0;
    double wall_time_ms = 0.0;
    std::vector<std::string> top_names;
    std::string ground_truth;
    std::string stop_reason = "none";
};

struct RunMetrics {
    std::vector<PackMetrics> packs;  // ordered by id
    std::size_t top1_count = 0;
    std::size_t top3_count = 0;
    std::size_t failures = 0;
    double mean_time_ms = 0.0;
};

RunMetrics aggregate(std::vector<PackMetrics> packs);
// Wall times are left out when `include_times` is false, which makes the
// output a pure function of the fixtures.
Json to_json(const RunMetrics& metrics, bool include_times = true);
std::string format_table(const RunMetrics& metrics);

struct ScenarioOptions {
    AppConfig config;
    KnowledgeGraph graph;
    Timestamp start = parse_rfc3339("2026-03-02T09:00:00Z");
    std::size_t top_k = 3;
    std::shared_ptr<const EmbeddingProvider> embedder;  // from config when null
    std::shared_ptr<const PromptLibrary> prompts;       // bundled assets when null
};

struct ScenarioRun {
    PackMetrics metrics;
    std::optional<Json> diagnosis;  // DiagnosisRecord
    Json transcript;
    KnowledgeGraph final_graph;
};

// Drives create → messages → open → select → finalize (→ expert merge) on an
// in-memory service with a manual clock. Failures are reported, not thrown.
ScenarioRun run_scenario(const ScenarioPack& pack, const ScenarioOptions& options);

struct EvalResult {
    RunMetrics metrics;
    std::vector<ScenarioRun> runs;  // ordered by pack id
    std::vector<std::string> warnings;
};

// Every *.json pack in `packs_dir`, run concurrently and merged by id.
EvalResult eval(const std::filesystem::path& packs_dir, const ScenarioOptions& options);

// Fixture graph shipped under the data directory.
KnowledgeGraph load_fixture_graph();
std::filesystem::path default_data_dir();

} // namespace kgdx
