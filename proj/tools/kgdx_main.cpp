#include "kgdx/config.hpp"
#include "kgdx/graph_store.hpp"
#include "kgdx/http_server.hpp"
#include "kgdx/scenario.hpp"
#include "kgdx/service.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kUsage = 2;

kgdx::HttpServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

void write_json(const std::string& path, const kgdx::Json& j) {
    std::ofstream out(path);
    if (!out) throw kgdx::Error(kgdx::ErrorCode::io, "cannot write " + path);
    out << j.dump(2) << '\n';
}

struct GraphArgs {
    std::string config;
    std::string nodes;
    std::string edges;
};

kgdx::ScenarioOptions scenario_options(const GraphArgs& args, std::size_t top_k) {
    kgdx::ScenarioOptions o;
    if (!args.config.empty()) o.config = kgdx::load_config(args.config);
    o.graph = args.nodes.empty() ? kgdx::load_fixture_graph() : kgdx::import_graph_files(args.nodes, args.edges);
    o.top_k = top_k;
    return o;
}

void add_graph_args(CLI::App* cmd, GraphArgs& args) {
    cmd->add_option("--config", args.config, "JSON config with thresholds")->check(CLI::ExistingFile);
    auto* nodes = cmd->add_option("--nodes", args.nodes, "KG nodes file (default: bundled fixture)")
                      ->check(CLI::ExistingFile);
    auto* edges = cmd->add_option("--edges", args.edges, "KG edges file")->check(CLI::ExistingFile);
    nodes->needs(edges);
    edges->needs(nodes);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-graph diagnostic assistant"};
    app.require_subcommand(1);

    std::string config_path;
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--config", config_path, "JSON config file")->required();

    std::string nodes, edges, store_dir;
    auto* import_kg = app.add_subcommand("import-kg", "Create a KG store from nodes/edges files");
    import_kg->add_option("--nodes", nodes)->required()->check(CLI::ExistingFile);
    import_kg->add_option("--edges", edges)->required()->check(CLI::ExistingFile);
    import_kg->add_option("--out", store_dir, "Store directory")->required();

    std::string out_dir;
    auto* export_kg = app.add_subcommand("export-kg", "Write a store's current graph as nodes/edges files");
    export_kg->add_option("--store", store_dir)->required()->check(CLI::ExistingDirectory);
    export_kg->add_option("--out-dir", out_dir)->required();

    std::string pack_path, out_path;
    GraphArgs scenario_args;
    auto* run_scenario = app.add_subcommand("run-scenario", "Run one scenario pack");
    run_scenario->add_option("--pack", pack_path)->required()->check(CLI::ExistingFile);
    run_scenario->add_option("--out", out_path)->required();
    add_graph_args(run_scenario, scenario_args);

    std::string packs_dir;
    std::size_t top_k = 3;
    GraphArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Run every pack in a directory and report hit counts");
    eval->add_option("--packs", packs_dir)->required();
    eval->add_option("--out", out_path)->required();
    eval->add_option("--top-k", top_k, "Hit window")->check(CLI::PositiveNumber);
    add_graph_args(eval, eval_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    if (serve->parsed()) {
        std::unique_ptr<kgdx::Service> service;
        kgdx::AppConfig config;
        try {
            config = kgdx::load_config(config_path);
        } catch (const kgdx::Error& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kUsage;
        }
        try {
            service = kgdx::Service::from_config(config);
            kgdx::HttpServer server(*service);
            const int port = server.bind(config.host, config.port);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            spdlog::info("listening on {}:{}", config.host, port);
            server.listen();
            g_server = nullptr;
            return kOk;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return kRunFailure;
        }
    }

    try {
        if (import_kg->parsed()) {
            const auto graph = kgdx::import_graph_files(nodes, edges);
            kgdx::GraphStore::create(store_dir, graph);
            std::cout << "imported " << graph.entities().size() << " entities and " << graph.triples().size()
                      << " triples into " << store_dir << '\n';
            return kOk;
        }
        if (export_kg->parsed()) {
            auto store = kgdx::GraphStore::open(store_dir);
            std::filesystem::create_directories(out_dir);
            const auto dir = std::filesystem::path(out_dir);
            kgdx::export_graph_files(*store->snapshot(), (dir / "nodes.jsonl").string(), (dir / "edges.jsonl").string());
            std::cout << "exported store " << store_dir << " to " << out_dir << '\n';
            return kOk;
        }
        if (run_scenario->parsed()) {
            const auto options = scenario_options(scenario_args, 3);
            const auto run = kgdx::run_scenario(kgdx::load_pack(pack_path), options);
            const auto metrics = kgdx::aggregate({run.metrics});
            write_json(out_path, {{"metrics", kgdx::to_json(metrics)},
                                  {"diagnosis", run.diagnosis ? *run.diagnosis : kgdx::Json(nullptr)},
                                  {"transcript", run.transcript}});
            std::cout << kgdx::format_table(metrics);
            return run.metrics.ok ? kOk : kRunFailure;
        }
        if (eval->parsed()) {
            const auto options = scenario_options(eval_args, top_k);
            const auto result = kgdx::eval(packs_dir, options);
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
            auto j = kgdx::to_json(result.metrics);
            j["warnings"] = result.warnings;
            write_json(out_path, j);
            std::cout << kgdx::format_table(result.metrics);
            return result.metrics.failures == 0 ? kOk : kRunFailure;
        }
    } catch (const kgdx::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code() == kgdx::ErrorCode::invalid_argument ? kUsage : kRunFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRunFailure;
    }
    return kUsage;
}
