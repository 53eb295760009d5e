#pragma once

#include "kgdx/common.hpp"
#include "kgdx/json_util.hpp"
#include "kgdx/llm_gateway.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kgdx {

struct Slot {
    std::string name;
    std::optional<std::string> value;
    bool required = false;

    bool operator==(const Slot&) const = default;
};

struct Section {
    std::string name;
    std::vector<Slot> slots;

    bool operator==(const Section&) const = default;
};

// Slot-constrained history record. Values go empty→filled or filled→revised;
// nothing here ever clears a value.
struct HistoryTemplate {
    std::vector<Section> sections;

    bool completed() const;
    std::size_t filled_required() const;
    std::size_t required_count() const;
    const Slot* find(std::string_view section, std::string_view slot) const;
    Slot* find(std::string_view section, std::string_view slot);

    // {"Section": {"slot": value-or-null}}
    Json to_json() const;
    static HistoryTemplate from_json(const Json& j, HistoryTemplate schema);

    bool operator==(const HistoryTemplate&) const = default;
};

// Chief complaint and present illness.
HistoryTemplate make_main_template();
// Past, personal/family history and patient perspective.
HistoryTemplate make_other_template();
bool is_schema_slot(std::string_view section, std::string_view slot);

struct HistoryDelta {
    std::string section;
    std::string slot;
    std::string value;
};

struct DdxEntry {
    std::string disease_name;
    double likelihood = 0.0;  // 0..10
    std::string rationale;

    bool operator==(const DdxEntry&) const = default;
};

// Sorted by likelihood descending, names ascending on ties; names unique.
std::vector<DdxEntry> normalize_ddx(std::vector<DdxEntry> ddx);
std::vector<DdxEntry> top_ddx(const std::vector<DdxEntry>& ddx, std::size_t k);
Json ddx_to_json(const std::vector<DdxEntry>& ddx);
std::vector<DdxEntry> ddx_from_json(const Json& j);

enum class DialogueStage { Main, Other, Ddx, Done };

std::string_view to_string(DialogueStage stage);
DialogueStage dialogue_stage_from_string(std::string_view text);

struct Message {
    std::string role;  // "system" | "patient"
    std::string text;
    Timestamp at;

    bool operator==(const Message&) const = default;
};

struct HistoryConfig {
    int max_ddx_questions = 6;
    int max_questions_per_turn = 2;
    // Pass each generated question through the refine_question prompt.
    bool refine_questions = false;

    bool operator==(const HistoryConfig&) const = default;
};

void validate(const HistoryConfig& config);

struct DialogueState {
    DialogueStage stage = DialogueStage::Main;
    std::vector<Message> messages;
    HistoryTemplate main_template = make_main_template();
    HistoryTemplate other_template = make_other_template();
    std::vector<DdxEntry> ddx;
    int ddx_questions_asked = 0;
    // Top-3 disease names before the most recent Ddx turn; absent until the
    // first Ddx turn has run.
    std::optional<std::vector<std::string>> previous_top3;
    HistoryConfig config;

    bool operator==(const DialogueState&) const = default;
};

Json to_json(const DialogueState& state);
DialogueState dialogue_state_from_json(const Json& j);

struct StepResult {
    DialogueState state;
    std::string prompt;
    std::vector<HistoryDelta> deltas;
    // Model-proposed fields outside the template schema, dropped.
    std::vector<std::string> rejected_fields;
};

struct History {
    HistoryTemplate main_template;
    HistoryTemplate other_template;
};

struct HistoryExport {
    History history;
    std::vector<DdxEntry> preliminary_ddx;  // at most 3
};

inline constexpr std::string_view kCompletionNotice =
    "Thank you, your history is complete. It has been passed to a physician, who will perform "
    "the diagnosis. You will be notified as soon as there is an update.";

DialogueState start_session(const HistoryConfig& config, Gateway& gateway, const Clock& clock);

// One patient turn. The input state is never modified; a gateway failure
// propagates and the caller keeps its previous state.
StepResult step(const DialogueState& state, const std::string& utterance, Gateway& gateway,
                const Clock& clock);

enum class StopReason { none, converged, question_cap };

std::string_view to_string(StopReason r);
// Convergence (top-3 unchanged over a Ddx turn) is reported before the cap.
StopReason stop_reason(const DialogueState& state);
bool stopping_criteria(const DialogueState& state);

HistoryExport finish(const DialogueState& state);

// {"main_template":{...},"other_template":{...},"preliminary_ddx":[...]}
Json history_export_to_json(const HistoryExport& h);
// Templates only, safe for the patient role.
Json history_to_json(const History& h);
// Plain-text rendering used as prompt context.
std::string render_history_text(const History& h);
std::string render_dialogue(const std::vector<Message>& messages);

// Keeps text up to and including the n-th question mark.
std::string limit_questions(const std::string& text, int max_questions);

} // namespace kgdx
