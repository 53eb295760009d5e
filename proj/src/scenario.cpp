#include "kgdx/scenario.hpp"

#include "kgdx/service.hpp"

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <future>

namespace kgdx {

namespace fs = std::filesystem;

void validate(const ScenarioPack& pack) {
    std::vector<std::string> missing;
    if (trim(pack.id).empty()) missing.push_back("id");
    if (pack.patient_script.empty()) missing.push_back("patient_script");
    if (trim(pack.ground_truth).empty()) missing.push_back("ground_truth");
    if (!missing.empty()) throw ValidationError("scenario pack is incomplete", missing);
}

ScenarioPack scenario_pack_from_json(const Json& j) {
    ScenarioPack p;
    p.id = j.value("id", "");
    p.description = j.value("description", "");
    p.patient_script = j.value("patient_script", std::vector<std::string>{});
    if (auto it = j.find("llm_script"); it != j.end()) p.llm_script = script_from_json(*it);
    p.ground_truth = j.value("ground_truth", "");
    p.acceptable_differentials = j.value("acceptable_differentials", std::vector<std::string>{});
    if (auto it = j.find("finalize"); it != j.end() && !it->is_null()) {
        p.finalize = FinalizeFields{it->value("conclusion", ""), it->value("plan", ""), it->value("follow_up", ""),
                                    it->value("precautions", "")};
    }
    p.approve_evolution = j.value("approve_evolution", std::vector<std::string>{});
    validate(p);
    return p;
}

Json to_json(const ScenarioPack& p) {
    Json j = {{"id", p.id},
              {"description", p.description},
              {"patient_script", p.patient_script},
              {"llm_script", script_to_json(p.llm_script)},
              {"ground_truth", p.ground_truth},
              {"acceptable_differentials", p.acceptable_differentials},
              {"approve_evolution", p.approve_evolution}};
    j["finalize"] = p.finalize ? Json{{"conclusion", p.finalize->conclusion},
                                      {"plan", p.finalize->plan},
                                      {"follow_up", p.finalize->follow_up},
                                      {"precautions", p.finalize->precautions}}
                               : Json(nullptr);
    return j;
}

ScenarioPack load_pack(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot read scenario pack " + path.string());
    try {
        return scenario_pack_from_json(Json::parse(in));
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::invalid_argument, "scenario pack " + path.string() + " is malformed: " + e.what());
    }
}

RunMetrics aggregate(std::vector<PackMetrics> packs) {
    std::sort(packs.begin(), packs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    RunMetrics m;
    double total = 0.0;
    for (const auto& p : packs) {
        m.top1_count += p.top1_hit ? 1 : 0;
        m.top3_count += p.top3_hit ? 1 : 0;
        m.failures += p.ok ? 0 : 1;
        total += p.wall_time_ms;
    }
    m.mean_time_ms = packs.empty() ? 0.0 : total / static_cast<double>(packs.size());
    m.packs = std::move(packs);
    return m;
}

Json to_json(const RunMetrics& m, bool include_times) {
    Json packs = Json::array();
    for (const auto& p : m.packs) {
        Json j = {{"id", p.id},
                  {"ok", p.ok},
                  {"error", p.error ? Json(*p.error) : Json(nullptr)},
                  {"top1_hit", p.top1_hit},
                  {"top3_hit", p.top3_hit},
                  {"turns", p.turns},
                  {"top_names", p.top_names},
                  {"ground_truth", p.ground_truth},
                  {"stop_reason", p.stop_reason}};
        if (include_times) j["wall_time_ms"] = p.wall_time_ms;
        packs.push_back(std::move(j));
    }
    Json aggregate = {{"packs", m.packs.size()},
                      {"top1_count", m.top1_count},
                      {"top3_count", m.top3_count},
                      {"failures", m.failures}};
    if (include_times) aggregate["mean_time_ms"] = m.mean_time_ms;
    return {{"packs", packs}, {"aggregate", aggregate}};
}

std::string format_table(const RunMetrics& m) {
    std::size_t width = 5;
    for (const auto& p : m.packs) width = std::max(width, p.id.size());
    auto yes = [](bool b) { return b ? "yes" : "no"; };
    std::string out = fmt::format("{:<{}}  {:>4}  {:>4}  {:>5}  {:>12}  {:>10}  {}\n", "pack", width, "top1", "top3",
                                  "turns", "stop", "wall_ms", "status");
    for (const auto& p : m.packs) {
        out += fmt::format("{:<{}}  {:>4}  {:>4}  {:>5}  {:>12}  {:>10.1f}  {}\n", p.id, width, yes(p.top1_hit),
                           yes(p.top3_hit), p.turns, p.stop_reason, p.wall_time_ms, p.ok ? "ok" : "FAILED");
    }
    const auto n = m.packs.size();
    out += fmt::format("{:<{}}  {:>4}  {:>4}  {:>5}  {:>12}  {:>10.1f}  {} failed\n", "total", width,
                       fmt::format("{}/{}", m.top1_count, n), fmt::format("{}/{}", m.top3_count, n), "", "",
                       m.mean_time_ms, m.failures);
    return out;
}

namespace {

bool name_in(const std::string& name, const std::vector<std::string>& accepted) {
    const auto n = normalize_text(name);
    return std::any_of(accepted.begin(), accepted.end(), [&](const std::string& a) { return normalize_text(a) == n; });
}

} // namespace

ScenarioRun run_scenario(const ScenarioPack& pack, const ScenarioOptions& options) {
    const auto started = std::chrono::steady_clock::now();
    ScenarioRun run;
    run.metrics.id = pack.id;
    run.metrics.ground_truth = pack.ground_truth;

    auto clock = std::make_shared<ManualClock>(options.start, std::chrono::seconds{1});
    auto provider = std::make_shared<ScriptedMockProvider>(pack.llm_script);
    ServiceOptions o;
    o.config = options.config;
    o.config.storage = {};
    o.store = std::make_shared<GraphStore>(options.graph);
    o.worklist = std::make_shared<Worklist>();
    o.embedder = options.embedder ? options.embedder : make_embedding_provider(options.config.embedding);
    o.prompts = options.prompts ? options.prompts : std::make_shared<const PromptLibrary>(PromptLibrary::load_default());
    o.session_provider = [provider](const std::string&) { return provider; };
    o.expert_provider = provider;
    o.clock = clock;
    Service service(std::move(o));

    const Caller patient{Role::patient, "patient-" + pack.id};
    const Caller physician{Role::physician, "dr-scenario"};
    const Caller expert{Role::expert, "expert-scenario"};
    std::string session_id;
    std::size_t used = 0;
    Json evolution = Json::array();

    try {
        session_id = service.create_session(patient).at("session_id").get<std::string>();
        for (const auto& utterance : pack.patient_script) {
            if (service.session(session_id).status != SessionStatus::collecting) break;
            service.post_message(patient, session_id, utterance);
            ++used;
        }
        run.metrics.turns = static_cast<int>(used);
        const auto after_dialogue = service.session(session_id);
        if (after_dialogue.status == SessionStatus::collecting) {
            throw Error(ErrorCode::invalid_state,
                        fmt::format("patient script exhausted after {} utterances in stage {}", used,
                                    to_string(after_dialogue.dialogue.stage)));
        }
        run.metrics.stop_reason = std::string(to_string(stop_reason(after_dialogue.dialogue)));

        service.wait_for_diagnosis(session_id);
        service.open_case(physician, session_id);
        const auto record = *service.session(session_id).diagnosis;
        run.diagnosis = to_json(record);

        std::vector<std::string> accepted = pack.acceptable_differentials;
        accepted.push_back(pack.ground_truth);
        const auto k = std::min(options.top_k, record.candidates.size());
        for (std::size_t i = 0; i < k; ++i) run.metrics.top_names.push_back(record.candidates[i].name);
        run.metrics.top1_hit = !run.metrics.top_names.empty() && name_in(run.metrics.top_names.front(), accepted);
        run.metrics.top3_hit = std::any_of(run.metrics.top_names.begin(), run.metrics.top_names.end(),
                                           [&](const std::string& n) { return name_in(n, accepted); });

        if (pack.finalize && !record.candidates.empty()) {
            const auto& top = record.candidates.front().disease_id;
            service.select_diagnosis(physician, session_id, top);
            Json body = {{"disease_id", top},
                         {"conclusion", pack.finalize->conclusion},
                         {"plan", pack.finalize->plan},
                         {"follow_up", pack.finalize->follow_up},
                         {"precautions", pack.finalize->precautions}};
            service.finalize(physician, session_id, body);
        }

        for (const auto& name : pack.approve_evolution) {
            std::optional<std::string> event_id;
            for (const auto& e : service.worklist().active()) {
                if (normalize_text(e.disease_name) == normalize_text(name)) event_id = e.id;
            }
            if (!event_id) throw Error(ErrorCode::not_found, "no open evolution event for '" + name + "'");
            service.draft_event(expert, *event_id);
            evolution.push_back(service.approve(expert, *event_id));
        }
        run.metrics.ok = true;
    } catch (const std::exception& e) {
        run.metrics.ok = false;
        run.metrics.error = e.what();
        spdlog::warn("scenario {} failed: {}", pack.id, e.what());
    }
    if (!session_id.empty()) service.wait_for_diagnosis(session_id);

    run.metrics.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    Json calls = Json::array();
    for (const auto& [id, prompt] : provider->received()) calls.push_back({{"template_id", to_string(id)}, {"prompt", prompt}});
    Json worklist = Json::array();
    for (const auto& e : service.worklist().list()) worklist.push_back(to_json(e));
    run.transcript = {{"pack_id", pack.id},
                      {"session", session_id.empty() ? Json(nullptr) : to_json(service.session(session_id))},
                      {"unused_utterances", pack.patient_script.size() - used},
                      {"llm_calls", calls},
                      {"worklist", worklist},
                      {"evolution", evolution}};
    run.final_graph = *service.store().snapshot();
    return run;
}

EvalResult eval(const fs::path& packs_dir, const ScenarioOptions& options) {
    EvalResult result;
    if (!fs::is_directory(packs_dir)) throw Error(ErrorCode::not_found, "no packs directory " + packs_dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(packs_dir)) {
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) result.warnings.push_back("no scenario packs in " + packs_dir.string());

    std::vector<std::future<ScenarioRun>> pending;
    for (const auto& file : files) {
        pending.push_back(std::async(std::launch::async, [file, &options] {
            try {
                return run_scenario(load_pack(file), options);
            } catch (const std::exception& e) {
                ScenarioRun failed;
                failed.metrics.id = file.stem().string();
                failed.metrics.error = e.what();
                failed.transcript = {{"pack_id", failed.metrics.id}, {"error", e.what()}};
                return failed;
            }
        }));
    }
    std::vector<PackMetrics> metrics;
    for (auto& f : pending) {
        auto run = f.get();
        metrics.push_back(run.metrics);
        result.runs.push_back(std::move(run));
    }
    std::sort(result.runs.begin(), result.runs.end(),
              [](const auto& a, const auto& b) { return a.metrics.id < b.metrics.id; });
    result.metrics = aggregate(std::move(metrics));
    return result;
}

fs::path default_data_dir() { return fs::path(KGDX_DEFAULT_DATA_DIR); }

KnowledgeGraph load_fixture_graph() {
    const auto dir = default_data_dir() / "fixture";
    return import_graph_files((dir / "nodes.jsonl").string(), (dir / "edges.jsonl").string());
}

} // namespace kgdx
