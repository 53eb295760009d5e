#include "kgdx/config.hpp"

#include <fstream>

namespace kgdx {

std::string_view to_string(Role r) {
    switch (r) {
        case Role::patient: return "patient";
        case Role::physician: return "physician";
        case Role::expert: return "expert";
    }
    return "patient";
}

Role role_from_string(std::string_view text) {
    for (auto r : {Role::patient, Role::physician, Role::expert}) {
        if (to_string(r) == text) return r;
    }
    throw Error(ErrorCode::invalid_argument, "unknown role '" + std::string(text) + "'");
}

HistoryConfig AppConfig::history() const {
    HistoryConfig h;
    h.max_ddx_questions = max_ddx_questions;
    h.max_questions_per_turn = max_questions_per_turn;
    h.refine_questions = refine_questions;
    return h;
}

DiagnosisConfig AppConfig::diagnosis() const {
    DiagnosisConfig d;
    d.linker.epsilon_s = epsilon_s;
    d.k = k;
    return d;
}

EvolutionConfig AppConfig::evolution() const {
    EvolutionConfig e;
    e.epsilon_t = epsilon_t;
    e.staleness_threshold = std::chrono::days{staleness_days};
    return e;
}

void validate(const AppConfig& config) {
    validate(config.history());
    validate(config.diagnosis());
    validate(config.evolution());
    if (config.max_ddx_questions < 0) throw Error(ErrorCode::invalid_argument, "max_ddx_questions must be >= 0");
    if (!(config.canvas_width > 0.0 && config.canvas_height > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "canvas dimensions must be positive");
    }
    if (config.port < 0 || config.port > 65535) throw Error(ErrorCode::invalid_argument, "port out of range");
}

namespace {

std::string resolve(const std::string& path, const std::filesystem::path& base) {
    if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
    return (base / path).lexically_normal().string();
}

} // namespace

AppConfig app_config_from_json(const Json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "config must be a JSON object");
    AppConfig c;
    c.epsilon_s = j.value("epsilon_s", c.epsilon_s);
    c.epsilon_t = j.value("epsilon_t", c.epsilon_t);
    c.staleness_days = j.value("staleness_days", c.staleness_days);
    c.max_ddx_questions = j.value("max_ddx_questions", c.max_ddx_questions);
    c.max_questions_per_turn = j.value("max_questions_per_turn", c.max_questions_per_turn);
    c.refine_questions = j.value("refine_questions", c.refine_questions);
    c.k = j.value("k", c.k);
    if (auto it = j.find("canvas"); it != j.end()) {
        c.canvas_width = it->value("width", c.canvas_width);
        c.canvas_height = it->value("height", c.canvas_height);
    }
    if (auto it = j.find("embedding"); it != j.end()) c.embedding = *it;
    if (auto it = j.find("llm"); it != j.end()) {
        c.llm = provider_config_from_json(*it);
        c.llm.script_path = resolve(c.llm.script_path, base_dir);
    }
    if (auto it = j.find("storage"); it != j.end()) {
        c.storage.dir = resolve(it->value("dir", ""), base_dir);
        c.storage.kg_nodes = resolve(it->value("kg_nodes", ""), base_dir);
        c.storage.kg_edges = resolve(it->value("kg_edges", ""), base_dir);
    }
    c.prompts_dir = resolve(j.value("prompts_dir", ""), base_dir);
    if (auto it = j.find("tokens"); it != j.end()) {
        for (const auto& [token, info] : it->items()) {
            c.tokens[token] = {role_from_string(info.at("role").get<std::string>()), info.at("user").get<std::string>()};
        }
    }
    if (auto it = j.find("listen"); it != j.end()) {
        c.host = it->value("host", c.host);
        c.port = it->value("port", c.port);
    }
    validate(c);
    return c;
}

Json to_json(const AppConfig& c) {
    Json tokens = Json::object();
    for (const auto& [token, caller] : c.tokens) tokens[token] = {{"role", to_string(caller.role)}, {"user", caller.user}};
    return {{"epsilon_s", c.epsilon_s},
            {"epsilon_t", c.epsilon_t},
            {"staleness_days", c.staleness_days},
            {"max_ddx_questions", c.max_ddx_questions},
            {"max_questions_per_turn", c.max_questions_per_turn},
            {"refine_questions", c.refine_questions},
            {"k", c.k},
            {"canvas", {{"width", c.canvas_width}, {"height", c.canvas_height}}},
            {"embedding", c.embedding},
            {"llm",
             {{"kind", c.llm.kind == ProviderKind::http_chat ? "http_chat" : "scripted_mock"},
              {"endpoint", c.llm.endpoint},
              {"script_path", c.llm.script_path},
              {"max_retries", c.llm.max_retries},
              {"timeout_ms", c.llm.timeout_ms},
              {"backoff_ms", c.llm.backoff_ms}}},
            {"storage", {{"dir", c.storage.dir}, {"kg_nodes", c.storage.kg_nodes}, {"kg_edges", c.storage.kg_edges}}},
            {"prompts_dir", c.prompts_dir},
            {"tokens", tokens},
            {"listen", {{"host", c.host}, {"port", c.port}}}};
}

AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot read config file " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::invalid_argument, "config file " + path.string() + " is not valid JSON: " + e.what());
    }
    auto config = app_config_from_json(j, path.parent_path());
    apply_env_overrides(config.llm);
    return config;
}

} // namespace kgdx
