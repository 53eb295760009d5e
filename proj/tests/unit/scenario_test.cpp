#include "kgdx/scenario.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace kgdx;
using namespace kgdx::test;

namespace {

ScenarioOptions fixture_options() {
    ScenarioOptions o;
    o.graph = fixture_graph();
    return o;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(KGDX_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST_CASE("bundled packs load and validate") {
    const auto files = scenario_files();
    REQUIRE(files.size() == 3);
    for (const auto& f : files) {
        const auto pack = load_pack(f);
        CHECK_FALSE(pack.patient_script.empty());
        CHECK_FALSE(pack.ground_truth.empty());
        CHECK(to_json(scenario_pack_from_json(to_json(pack))) == to_json(pack));
    }
    auto broken = to_json(load_pack(files[0]));
    broken["patient_script"] = Json::array();
    CHECK_THROWS_AS(scenario_pack_from_json(broken), Error);
}

TEST_CASE("eye strain pack finishes with the ground truth on top") {
    const auto run = run_scenario(load_pack(scenarios_dir() / "01-eye-strain-headache.json"), fixture_options());
    CHECK(run.metrics.ok);
    CHECK(run.metrics.top1_hit);
    CHECK(run.metrics.top3_hit);
    CHECK(run.metrics.stop_reason == "converged");
    REQUIRE(run.diagnosis);
    CHECK((*run.diagnosis)["candidates"][0]["disease_id"] == "d-eyestrain");
}

TEST_CASE("eval is deterministic and top-1 hits are also top-3 hits") {
    const auto a = eval(scenarios_dir(), fixture_options());
    const auto b = eval(scenarios_dir(), fixture_options());
    CHECK(to_json(a.metrics, false).dump() == to_json(b.metrics, false).dump());
    CHECK(a.metrics.packs.size() == 3);
    CHECK(a.metrics.failures == 0);
    CHECK(a.metrics.top1_count == 2);
    CHECK(a.metrics.top3_count == 3);
    for (const auto& p : a.metrics.packs) {
        if (p.top1_hit) CHECK(p.top3_hit);
    }
    CHECK(format_table(a.metrics).find("eye-strain-headache") != std::string::npos);
}

TEST_CASE("a broken script is reported as a failed pack, not thrown") {
    auto pack = load_pack(scenarios_dir() / "01-eye-strain-headache.json");
    pack.llm_script.resize(3);
    const auto run = run_scenario(pack, fixture_options());
    CHECK_FALSE(run.metrics.ok);
    CHECK(run.metrics.error);
    const auto m = aggregate({run.metrics});
    CHECK(m.failures == 1);
}

TEST_CASE("config files resolve relative paths and reject bad values") {
    const auto j = Json::parse(std::ifstream(std::filesystem::path(KGDX_DATA_DIR_FOR_TESTS) / "config.example.json"));
    const auto c = app_config_from_json(j, "/srv/kgdx/etc");
    CHECK(c.storage.dir == "/srv/kgdx/var");
    CHECK(c.storage.kg_nodes == "/srv/kgdx/etc/fixture/nodes.jsonl");
    CHECK(c.llm.script_path == "/srv/kgdx/etc/demo_script.json");
    CHECK(c.tokens.at("expert-token").role == Role::expert);
    CHECK(c.k == 3);
    CHECK(app_config_from_json(to_json(c)).port == 8080);

    auto bad = j;
    bad["epsilon_s"] = 1.5;
    CHECK_THROWS_AS(app_config_from_json(bad), Error);
    bad = j;
    bad["tokens"]["x"] = {{"role", "admin"}, {"user", "u"}};
    CHECK_THROWS_AS(app_config_from_json(bad), Error);
    CHECK_THROWS_AS(app_config_from_json(Json::array()), Error);
}

TEST_CASE("the CLI reports usage errors and run outcomes through exit codes") {
    TempDir tmp;
    const auto data = std::filesystem::path(KGDX_DATA_DIR_FOR_TESTS);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("eval --packs " + scenarios_dir().string()) == 2);
    CHECK(run_cli("--help") == 0);

    const auto out = tmp / "eval.json";
    CHECK(run_cli("eval --packs " + scenarios_dir().string() + " --out " + out.string()) == 0);
    const auto metrics = Json::parse(std::ifstream(out));
    CHECK(metrics["aggregate"]["top1_count"] == 2);
    CHECK(metrics["aggregate"]["top3_count"] == 3);

    const auto store = tmp / "store";
    CHECK(run_cli("import-kg --nodes " + (data / "fixture/nodes.jsonl").string() + " --edges " +
                  (data / "fixture/edges.jsonl").string() + " --out " + store.string()) == 0);
    CHECK(run_cli("export-kg --store " + store.string() + " --out-dir " + (tmp / "export").string()) == 0);
    CHECK(import_graph_files((tmp / "export/nodes.jsonl").string(), (tmp / "export/edges.jsonl").string())
              .triples()
              .size() == fixture_graph().triples().size());

    const auto run_out = tmp / "run.json";
    CHECK(run_cli("run-scenario --pack " + (scenarios_dir() / "01-eye-strain-headache.json").string() + " --out " +
                  run_out.string()) == 0);
    CHECK(Json::parse(std::ifstream(run_out))["diagnosis"].is_object());

    std::ofstream(tmp / "bad.json") << "{ nope";
    CHECK(run_cli("serve --config " + (tmp / "bad.json").string()) == 2);
}
