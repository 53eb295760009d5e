#include "kgdx/llm_gateway.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace kgdx {

std::string_view to_string(TemplateId id) {
    switch (id) {
        case TemplateId::greeting: return "greeting";
        case TemplateId::update_by_dialogue: return "update_by_dialogue";
        case TemplateId::generate_preliminary_ddx: return "generate_preliminary_ddx";
        case TemplateId::targeted_update: return "targeted_update";
        case TemplateId::recognize: return "recognize";
        case TemplateId::rank: return "rank";
        case TemplateId::draft_disease: return "draft_disease";
        case TemplateId::extract_triples: return "extract_triples";
        case TemplateId::rank_evidence: return "rank_evidence";
        case TemplateId::reason: return "reason";
        case TemplateId::patient_rewrite: return "patient_rewrite";
        case TemplateId::refine_question: return "refine_question";
    }
    return "unknown";
}

TemplateId template_id_from_string(std::string_view text) {
    for (auto id : kAllTemplates) {
        if (to_string(id) == text) return id;
    }
    throw Error(ErrorCode::invalid_argument, "unknown template id '" + std::string(text) + "'");
}

ResponseSchema schema_for(TemplateId id) {
    switch (id) {
        case TemplateId::greeting:
        case TemplateId::patient_rewrite:
        case TemplateId::refine_question: return ResponseSchema::text;
        case TemplateId::update_by_dialogue:
        case TemplateId::generate_preliminary_ddx:
        case TemplateId::targeted_update: return ResponseSchema::json_object;
        case TemplateId::recognize: return ResponseSchema::lines;
        case TemplateId::rank: return ResponseSchema::scores;
        case TemplateId::draft_disease: return ResponseSchema::headings;
        case TemplateId::extract_triples: return ResponseSchema::triples;
        case TemplateId::rank_evidence: return ResponseSchema::ranked_triples;
        case TemplateId::reason: return ResponseSchema::numbered;
    }
    return ResponseSchema::text;
}

std::string_view format_reminder(ResponseSchema schema) {
    switch (schema) {
        case ResponseSchema::text: return "Reply with plain text only.";
        case ResponseSchema::lines: return "Reply with one item per line and nothing else.";
        case ResponseSchema::scores:
            return "Reply with one 'name: score' line per candidate, score between 0 and 10.";
        case ResponseSchema::headings: return "Reply with '## Heading' sections only.";
        case ResponseSchema::triples:
            return "Reply with one 'subject|relation|object' line per fact and nothing else.";
        case ResponseSchema::ranked_triples:
            return "Reply with '## symptoms' and '## drugs' sections listing the given "
                   "'subject|relation|object' lines in ranked order, unchanged.";
        case ResponseSchema::numbered:
            return "Reply with numbered reasoning steps, then a 'Treatment:' line followed by "
                   "numbered treatment items.";
        case ResponseSchema::json_object: return "Reply with a single JSON object and nothing else.";
    }
    return "";
}

namespace {

std::string strip_bullet(const std::string& line) {
    static const std::regex bullet(R"(^\s*(?:[-*•]|\d+[.)])\s+)");
    return trim(std::regex_replace(line, bullet, "", std::regex_constants::format_first_only));
}

bool is_heading(const std::string& line, std::string& name) {
    const auto t = trim(line);
    if (t.empty() || t[0] != '#') return false;
    std::size_t i = 0;
    while (i < t.size() && t[i] == '#') ++i;
    name = normalize_text(t.substr(i));
    return true;
}

Json parse_lines(const std::string& raw) {
    Json out = Json::array();
    for (const auto& line : split_lines(raw)) {
        auto item = strip_bullet(line);
        if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw ParseError("expected at least one line item", raw);
    return out;
}

Json parse_scores(const std::string& raw) {
    Json out = Json::array();
    for (const auto& line : split_lines(raw)) {
        const auto t = strip_bullet(line);
        if (t.empty()) continue;
        const auto colon = t.rfind(':');
        if (colon == std::string::npos) throw ParseError("score line without ':': " + t, raw);
        const auto name = trim(t.substr(0, colon));
        auto num = trim(t.substr(colon + 1));
        if (auto slash = num.find('/'); slash != std::string::npos) num = trim(num.substr(0, slash));
        double score = 0.0;
        auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), score);
        if (name.empty() || ec != std::errc{} || ptr != num.data() + num.size()) {
            throw ParseError("malformed score line: " + t, raw);
        }
        out.push_back({{"name", name}, {"score", std::clamp(score, 0.0, 10.0)}, {"raw_score", score}});
    }
    if (out.empty()) throw ParseError("expected at least one score", raw);
    return out;
}

Json parse_headings(const std::string& raw) {
    Json out = Json::object();
    std::string current = "_preamble";
    std::string body;
    auto flush = [&] {
        auto text = trim(body);
        if (!text.empty() || current != "_preamble") out[current] = text;
        body.clear();
    };
    for (const auto& line : split_lines(raw)) {
        std::string name;
        if (is_heading(line, name)) {
            flush();
            current = name;
        } else {
            body += line;
            body += '\n';
        }
    }
    flush();
    return out;
}

Json parse_triples(const std::string& raw) {
    Json out = Json::array();
    for (const auto& line : split_lines(raw)) {
        const auto t = strip_bullet(line);
        if (t.empty()) continue;
        std::vector<std::string> parts;
        std::size_t start = 0;
        while (true) {
            auto bar = t.find('|', start);
            parts.push_back(trim(t.substr(start, bar == std::string::npos ? bar : bar - start)));
            if (bar == std::string::npos) break;
            start = bar + 1;
        }
        if (parts.size() != 3 || parts[0].empty() || parts[1].empty() || parts[2].empty()) {
            throw ParseError("triple line must have exactly three fields: " + t, raw);
        }
        out.push_back(parts);
    }
    return out;
}

Json parse_ranked_triples(const std::string& raw) {
    Json out = {{"symptoms", Json::array()}, {"drugs", Json::array()}};
    std::string section;
    for (const auto& line : split_lines(raw)) {
        std::string name;
        if (is_heading(line, name)) {
            section = name.rfind("symptom", 0) == 0 ? "symptoms"
                      : name.rfind("drug", 0) == 0  ? "drugs"
                                                    : "";
            continue;
        }
        const auto item = strip_bullet(line);
        if (item.empty() || section.empty()) continue;
        out[section].push_back(item);
    }
    return out;
}

Json parse_numbered(const std::string& raw) {
    static const std::regex numbered(R"(^\s*\d+[.)]\s+(.+)$)");
    static const std::regex bulleted(R"(^\s*[-*•]\s+(.+)$)");
    static const std::regex treatment_heading(
        R"(^\s*#*\s*(treatment|treatments|treatment recommendations|management)\s*:?\s*$)",
        std::regex::icase);
    Json out = {{"steps", Json::array()}, {"treatment", Json::array()}};
    bool in_treatment = false;
    std::smatch m;
    for (const auto& line : split_lines(raw)) {
        if (std::regex_match(line, treatment_heading)) {
            in_treatment = true;
            continue;
        }
        if (std::regex_match(line, m, numbered) || (in_treatment && std::regex_match(line, m, bulleted))) {
            out[in_treatment ? "treatment" : "steps"].push_back(trim(m[1].str()));
        }
    }
    if (out["steps"].empty() && out["treatment"].empty()) {
        throw ParseError("no numbered reasoning steps found", raw);
    }
    return out;
}

Json parse_json_object(const std::string& raw) {
    const auto open = raw.find('{');
    const auto close = raw.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
        throw ParseError("no JSON object in response", raw);
    }
    try {
        auto j = Json::parse(raw.substr(open, close - open + 1));
        if (!j.is_object()) throw ParseError("response is not a JSON object", raw);
        return j;
    } catch (const Json::exception& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), raw);
    }
}

} // namespace

Json parse_response(ResponseSchema schema, const std::string& raw) {
    switch (schema) {
        case ResponseSchema::text: {
            auto t = trim(raw);
            if (t.empty()) throw ParseError("empty response", raw);
            return t;
        }
        case ResponseSchema::lines: return parse_lines(raw);
        case ResponseSchema::scores: return parse_scores(raw);
        case ResponseSchema::headings: return parse_headings(raw);
        case ResponseSchema::triples: return parse_triples(raw);
        case ResponseSchema::ranked_triples: return parse_ranked_triples(raw);
        case ResponseSchema::numbered: return parse_numbered(raw);
        case ResponseSchema::json_object: return parse_json_object(raw);
    }
    throw ParseError("unknown schema", raw);
}

// ---------------------------------------------------------------------------
// Templates

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> names;
    std::size_t pos = 0;
    while ((pos = body.find("{{", pos)) != std::string::npos) {
        auto end = body.find("}}", pos + 2);
        if (end == std::string::npos) break;
        auto name = trim(body.substr(pos + 2, end - pos - 2));
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
        pos = end + 2;
    }
    return names;
}

std::string render(const PromptTemplate& tmpl, const PromptVars& vars) {
    std::string out;
    out.reserve(tmpl.body.size());
    std::size_t pos = 0;
    while (true) {
        auto open = tmpl.body.find("{{", pos);
        if (open == std::string::npos) break;
        auto close = tmpl.body.find("}}", open + 2);
        if (close == std::string::npos) {
            throw Error(ErrorCode::invalid_argument,
                        "unterminated placeholder in template '" + std::string(to_string(tmpl.id)) + "'");
        }
        out.append(tmpl.body, pos, open - pos);
        const auto name = trim(tmpl.body.substr(open + 2, close - open - 2));
        auto it = vars.find(name);
        if (it == vars.end()) {
            throw Error(ErrorCode::invalid_argument, "template '" + std::string(to_string(tmpl.id)) +
                                                         "' has no value for placeholder '" + name + "'");
        }
        out += it->second;
        pos = close + 2;
    }
    out.append(tmpl.body, pos);
    return out;
}

PromptLibrary PromptLibrary::load(const std::filesystem::path& dir) {
    PromptLibrary lib;
    for (auto id : kAllTemplates) {
        const auto path = dir / (std::string(to_string(id)) + ".txt");
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::io, "missing prompt asset " + path.string());
        std::string line, body;
        bool header = true;
        while (std::getline(in, line)) {
            if (header && line.rfind("#!", 0) == 0) continue;
            header = false;
            body += line;
            body += '\n';
        }
        lib.set({id, body, schema_for(id)});
    }
    return lib;
}

PromptLibrary PromptLibrary::load_default() {
    return load(std::filesystem::path(KGDX_DEFAULT_ASSET_DIR) / "prompts");
}

void PromptLibrary::set(PromptTemplate tmpl) { templates_[tmpl.id] = std::move(tmpl); }

const PromptTemplate& PromptLibrary::get(TemplateId id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) {
        throw Error(ErrorCode::not_found, "no prompt template '" + std::string(to_string(id)) + "'");
    }
    return it->second;
}

// ---------------------------------------------------------------------------
// Scripted mock

std::vector<ScriptEntry> script_from_json(const Json& j) {
    std::vector<ScriptEntry> script;
    for (const auto& item : j) {
        script.push_back({template_id_from_string(item.at("template_id").get<std::string>()),
                          item.at("response").get<std::string>()});
    }
    return script;
}

Json script_to_json(const std::vector<ScriptEntry>& script) {
    Json j = Json::array();
    for (const auto& e : script) j.push_back({{"template_id", to_string(e.template_id)}, {"response", e.response}});
    return j;
}

std::vector<ScriptEntry> load_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open script " + path.string());
    try {
        return script_from_json(Json::parse(in));
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::invalid_argument, "malformed script " + path.string() + ": " + e.what());
    }
}

ScriptedMockProvider::ScriptedMockProvider(const std::vector<ScriptEntry>& script) {
    for (const auto& e : script) responses_[e.template_id].push_back(e.response);
}

std::string ScriptedMockProvider::complete(TemplateId id, const std::vector<ChatMessage>& messages) {
    std::lock_guard lock(mutex_);
    received_.emplace_back(id, messages.empty() ? std::string{} : messages.back().content);
    const auto index = counters_[id]++;
    const auto& queue = responses_[id];
    if (index >= queue.size()) {
        throw Error(ErrorCode::gateway, "mock script exhausted for template '" +
                                            std::string(to_string(id)) + "' at call #" +
                                            std::to_string(index + 1));
    }
    return queue[index];
}

Json ScriptedMockProvider::state() const {
    std::lock_guard lock(mutex_);
    Json j = Json::object();
    for (const auto& [id, n] : counters_) j[std::string(to_string(id))] = n;
    return j;
}

void ScriptedMockProvider::restore(const Json& state) {
    std::lock_guard lock(mutex_);
    counters_.clear();
    for (const auto& [name, n] : state.items()) {
        counters_[template_id_from_string(name)] = n.get<std::size_t>();
    }
}

std::size_t ScriptedMockProvider::calls(TemplateId id) const {
    std::lock_guard lock(mutex_);
    auto it = counters_.find(id);
    return it == counters_.end() ? 0 : it->second;
}

std::vector<std::pair<TemplateId, std::string>> ScriptedMockProvider::received() const {
    std::lock_guard lock(mutex_);
    return received_;
}

// ---------------------------------------------------------------------------
// Provider config

ProviderConfig provider_config_from_json(const Json& j) {
    ProviderConfig c;
    const auto kind = j.value("kind", std::string("scripted_mock"));
    if (kind == "scripted_mock") {
        c.kind = ProviderKind::scripted_mock;
    } else if (kind == "http_chat") {
        c.kind = ProviderKind::http_chat;
    } else {
        throw Error(ErrorCode::invalid_argument, "unknown llm provider kind '" + kind + "'");
    }
    c.endpoint = j.value("endpoint", "");
    c.credential = j.value("credential", "");
    c.script_path = j.value("script_path", "");
    c.max_retries = j.value("max_retries", 2);
    c.timeout_ms = j.value("timeout_ms", 30000);
    c.backoff_ms = j.value("backoff_ms", 200);
    return c;
}

void apply_env_overrides(ProviderConfig& config) {
    if (const char* kind = std::getenv("KGDX_LLM_PROVIDER")) {
        config.kind = std::string_view(kind) == "http_chat" ? ProviderKind::http_chat
                                                            : ProviderKind::scripted_mock;
    }
    if (const char* ep = std::getenv("KGDX_LLM_ENDPOINT")) config.endpoint = ep;
    if (const char* cred = std::getenv("KGDX_LLM_CREDENTIAL")) config.credential = cred;
}

std::shared_ptr<LlmProvider> make_provider(const ProviderConfig& config) {
    switch (config.kind) {
        case ProviderKind::scripted_mock:
            return std::make_shared<ScriptedMockProvider>(
                config.script_path.empty() ? std::vector<ScriptEntry>{} : load_script(config.script_path));
        case ProviderKind::http_chat: return std::make_shared<HttpChatProvider>(config);
    }
    throw Error(ErrorCode::invalid_argument, "unknown provider kind");
}

// ---------------------------------------------------------------------------
// Transcript

Transcript::Transcript(std::filesystem::path file) : file_(std::move(file)) {
    if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
}

void Transcript::record(TemplateId id, int attempt, const std::string& prompt,
                        const std::string& response, const std::string& error) {
    Json entry = {{"template_id", to_string(id)}, {"attempt", attempt}, {"prompt", prompt},
                  {"response", response}};
    if (!error.empty()) entry["error"] = error;
    std::lock_guard lock(mutex_);
    entry["seq"] = entries_.size() + 1;
    if (file_) {
        std::ofstream out(*file_, std::ios::app);
        out << entry.dump() << '\n';
    }
    entries_.push_back(std::move(entry));
}

std::vector<Json> Transcript::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<const PromptLibrary> prompts, std::shared_ptr<LlmProvider> provider,
                 int max_retries, int backoff_ms, std::shared_ptr<Transcript> transcript)
    : prompts_(std::move(prompts)),
      provider_(std::move(provider)),
      max_retries_(max_retries),
      backoff_ms_(backoff_ms),
      transcript_(std::move(transcript)) {}

std::string Gateway::dispatch(TemplateId id, const std::string& prompt) {
    const std::vector<ChatMessage> messages{{"user", prompt}};
    for (int attempt = 0;; ++attempt) {
        try {
            return provider_->complete(id, messages);
        } catch (const Error& e) {
            if (transcript_) transcript_->record(id, attempt, prompt, {}, e.what());
            if (!e.retryable() || attempt >= max_retries_) throw;
            spdlog::warn("llm call '{}' failed ({}), retrying", to_string(id), e.what());
            if (backoff_ms_ > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms_ << attempt));
            }
        }
    }
}

Json Gateway::call(TemplateId id, const PromptVars& vars) {
    const auto& tmpl = prompts_->get(id);
    std::string prompt = render(tmpl, vars);
    std::string raw = dispatch(id, prompt);
    try {
        auto parsed = parse_response(tmpl.schema, raw);
        if (transcript_) transcript_->record(id, 0, prompt, raw);
        return parsed;
    } catch (const ParseError& e) {
        if (transcript_) transcript_->record(id, 0, prompt, raw, e.what());
        spdlog::warn("llm call '{}' violated its response schema: {}", to_string(id), e.what());
    }
    prompt += "\n\nFORMAT REMINDER: ";
    prompt += format_reminder(tmpl.schema);
    raw = dispatch(id, prompt);
    try {
        auto parsed = parse_response(tmpl.schema, raw);
        if (transcript_) transcript_->record(id, 1, prompt, raw);
        return parsed;
    } catch (const ParseError& e) {
        if (transcript_) transcript_->record(id, 1, prompt, raw, e.what());
        throw;
    }
}

} // namespace kgdx
