#pragma once

#include "kgdx/diagnosis.hpp"
#include "kgdx/evolution.hpp"
#include "kgdx/history.hpp"
#include "kgdx/llm_gateway.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace kgdx {

enum class Role { patient, physician, expert };

std::string_view to_string(Role r);
Role role_from_string(std::string_view text);

struct Caller {
    Role role = Role::patient;
    std::string user;
};

struct StorageConfig {
    // Root for the KG store, worklist and session logs; empty keeps
    // everything in memory.
    std::string dir;
    // Seed files imported when the store directory does not exist yet.
    std::string kg_nodes;
    std::string kg_edges;
};

struct AppConfig {
    double epsilon_s = 0.80;
    double epsilon_t = 0.90;
    int staleness_days = 365;
    int max_ddx_questions = 6;
    int max_questions_per_turn = 2;
    bool refine_questions = false;
    std::size_t k = 3;
    double canvas_width = 1000.0;
    double canvas_height = 1000.0;
    Json embedding = {{"provider", "mock"}};
    ProviderConfig llm;
    StorageConfig storage;
    std::string prompts_dir;
    std::map<std::string, Caller> tokens;  // static role tokens
    std::string host = "127.0.0.1";
    int port = 8080;

    HistoryConfig history() const;
    DiagnosisConfig diagnosis() const;
    EvolutionConfig evolution() const;
};

void validate(const AppConfig& config);

// Relative paths inside the file resolve against `base_dir`.
AppConfig app_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Json to_json(const AppConfig& config);
// Reads a JSON config file and applies the LLM environment overrides.
AppConfig load_config(const std::filesystem::path& path);

} // namespace kgdx
