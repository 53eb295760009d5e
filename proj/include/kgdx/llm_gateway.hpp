#pragma once

#include "kgdx/common.hpp"
#include "kgdx/json_util.hpp"

#include <array>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace kgdx {

enum class TemplateId {
    greeting,
    update_by_dialogue,
    generate_preliminary_ddx,
    targeted_update,
    recognize,
    rank,
    draft_disease,
    extract_triples,
    rank_evidence,
    reason,
    patient_rewrite,
    refine_question,
};

inline constexpr std::array<TemplateId, 12> kAllTemplates = {
    TemplateId::greeting,        TemplateId::update_by_dialogue, TemplateId::generate_preliminary_ddx,
    TemplateId::targeted_update, TemplateId::recognize,          TemplateId::rank,
    TemplateId::draft_disease,   TemplateId::extract_triples,    TemplateId::rank_evidence,
    TemplateId::reason,          TemplateId::patient_rewrite,    TemplateId::refine_question,
};

std::string_view to_string(TemplateId id);
TemplateId template_id_from_string(std::string_view text);

// How raw model text is turned into a structured value.
enum class ResponseSchema {
    text,               // trimmed string
    lines,              // ["item", ...]; empty output is a violation
    scores,             // [{"name","score","raw_score"}], score clamped to [0,10]
    headings,           // {"normalized heading": "body", ...}
    triples,            // [["s","r","o"], ...]
    ranked_triples,     // {"symptoms": ["s|r|o", ...], "drugs": [...]}
    numbered,           // {"steps": [...], "treatment": [...]}
    json_object,        // the first {...} block, parsed
};

ResponseSchema schema_for(TemplateId id);
std::string_view format_reminder(ResponseSchema schema);

Json parse_response(ResponseSchema schema, const std::string& raw);

struct PromptTemplate {
    TemplateId id;
    std::string body;  // {{placeholder}} syntax
    ResponseSchema schema;

    std::vector<std::string> placeholders() const;
};

using PromptVars = std::map<std::string, std::string>;

// Fills every {{name}}; a placeholder without a value is an error.
std::string render(const PromptTemplate& tmpl, const PromptVars& vars);

class PromptLibrary {
public:
    // Reads <dir>/<template_id>.txt for every template. Leading lines that
    // start with "#!" are asset header comments and are dropped.
    static PromptLibrary load(const std::filesystem::path& dir);
    static PromptLibrary load_default();

    void set(PromptTemplate tmpl);
    const PromptTemplate& get(TemplateId id) const;

private:
    std::map<TemplateId, PromptTemplate> templates_;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

class LlmProvider {
public:
    virtual ~LlmProvider() = default;
    virtual std::string complete(TemplateId id, const std::vector<ChatMessage>& messages) = 0;
    // Resumable provider state (mock counters); empty for stateless providers.
    virtual Json state() const { return Json::object(); }
    virtual void restore(const Json&) {}
};

struct ScriptEntry {
    TemplateId template_id;
    std::string response;
};

std::vector<ScriptEntry> script_from_json(const Json& j);
Json script_to_json(const std::vector<ScriptEntry>& script);
std::vector<ScriptEntry> load_script(const std::filesystem::path& path);

// Replays scripted responses per template in order. Never touches the network.
class ScriptedMockProvider final : public LlmProvider {
public:
    explicit ScriptedMockProvider(const std::vector<ScriptEntry>& script);

    std::string complete(TemplateId id, const std::vector<ChatMessage>& messages) override;
    Json state() const override;
    void restore(const Json& state) override;

    std::size_t calls(TemplateId id) const;
    // Prompts received, in call order (for assertions on prompt context).
    std::vector<std::pair<TemplateId, std::string>> received() const;

private:
    mutable std::mutex mutex_;
    std::map<TemplateId, std::vector<std::string>> responses_;
    std::map<TemplateId, std::size_t> counters_;
    std::vector<std::pair<TemplateId, std::string>> received_;
};

enum class ProviderKind { scripted_mock, http_chat };

struct ProviderConfig {
    ProviderKind kind = ProviderKind::scripted_mock;
    std::string endpoint;
    std::string credential;
    std::string script_path;
    int max_retries = 2;
    int timeout_ms = 30000;
    int backoff_ms = 200;
};

ProviderConfig provider_config_from_json(const Json& j);
// KGDX_LLM_PROVIDER, KGDX_LLM_ENDPOINT, KGDX_LLM_CREDENTIAL override the file.
void apply_env_overrides(ProviderConfig& config);

// POSTs {"messages":[{"role","content"}]} and reads {"content"}.
class HttpChatProvider final : public LlmProvider {
public:
    explicit HttpChatProvider(ProviderConfig config);
    std::string complete(TemplateId id, const std::vector<ChatMessage>& messages) override;

private:
    ProviderConfig config_;
};

std::shared_ptr<LlmProvider> make_provider(const ProviderConfig& config);

// Append-only audit log of every prompt and response.
class Transcript {
public:
    Transcript() = default;
    explicit Transcript(std::filesystem::path file);

    void record(TemplateId id, int attempt, const std::string& prompt, const std::string& response,
                const std::string& error = {});
    std::vector<Json> entries() const;

private:
    mutable std::mutex mutex_;
    std::optional<std::filesystem::path> file_;
    std::vector<Json> entries_;
};

// Renders, dispatches, retries and parses. Transient provider failures are
// retried max_retries times with exponential backoff; a schema violation is
// retried once with a format reminder appended.
class Gateway {
public:
    Gateway(std::shared_ptr<const PromptLibrary> prompts, std::shared_ptr<LlmProvider> provider,
            int max_retries = 2, int backoff_ms = 0, std::shared_ptr<Transcript> transcript = {});

    Json call(TemplateId id, const PromptVars& vars);

    LlmProvider& provider() { return *provider_; }
    const std::shared_ptr<Transcript>& transcript() const { return transcript_; }

private:
    std::string dispatch(TemplateId id, const std::string& prompt);

    std::shared_ptr<const PromptLibrary> prompts_;
    std::shared_ptr<LlmProvider> provider_;
    int max_retries_;
    int backoff_ms_;
    std::shared_ptr<Transcript> transcript_;
};

} // namespace kgdx
