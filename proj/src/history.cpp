#include "kgdx/history.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>

namespace kgdx {

namespace {

Section section(std::string name, std::initializer_list<std::pair<const char*, bool>> slots) {
    Section s{std::move(name), {}};
    for (const auto& [slot, required] : slots) s.slots.push_back({slot, std::nullopt, required});
    return s;
}

} // namespace

HistoryTemplate make_main_template() {
    return {{
        section("Patient Information", {{"age", true}, {"sex", true}, {"occupation", false}}),
        section("Chief Complaint", {{"complaint", true},
                                    {"onset", true},
                                    {"duration", true},
                                    {"severity", true},
                                    {"course", false}}),
        section("Clinical Findings", {{"associated_symptoms", true},
                                      {"aggravating_factors", false},
                                      {"relieving_factors", false}}),
    }};
}

HistoryTemplate make_other_template() {
    return {{
        section("Past History", {{"past_diseases", true}, {"medications", true}, {"allergies", true}}),
        section("Personal & Family History", {{"smoking_alcohol", false}, {"family_history", true}}),
        section("Patient Perspective", {{"concerns", false}, {"expectations", false}}),
    }};
}

bool is_schema_slot(std::string_view section, std::string_view slot) {
    static const HistoryTemplate main = make_main_template();
    static const HistoryTemplate other = make_other_template();
    return main.find(section, slot) || other.find(section, slot);
}

bool HistoryTemplate::completed() const { return filled_required() == required_count(); }

std::size_t HistoryTemplate::filled_required() const {
    std::size_t n = 0;
    for (const auto& s : sections) {
        for (const auto& slot : s.slots) {
            if (slot.required && slot.value && !slot.value->empty()) ++n;
        }
    }
    return n;
}

std::size_t HistoryTemplate::required_count() const {
    std::size_t n = 0;
    for (const auto& s : sections) {
        for (const auto& slot : s.slots) n += slot.required ? 1 : 0;
    }
    return n;
}

const Slot* HistoryTemplate::find(std::string_view section_name, std::string_view slot_name) const {
    for (const auto& s : sections) {
        if (s.name != section_name) continue;
        for (const auto& slot : s.slots) {
            if (slot.name == slot_name) return &slot;
        }
    }
    return nullptr;
}

Slot* HistoryTemplate::find(std::string_view section_name, std::string_view slot_name) {
    return const_cast<Slot*>(std::as_const(*this).find(section_name, slot_name));
}

Json HistoryTemplate::to_json() const {
    OrderedJson j = OrderedJson::object();
    for (const auto& s : sections) {
        OrderedJson slots = OrderedJson::object();
        for (const auto& slot : s.slots) {
            slots[slot.name] = slot.value ? OrderedJson(*slot.value) : OrderedJson(nullptr);
        }
        j[s.name] = std::move(slots);
    }
    return Json::parse(j.dump());
}

HistoryTemplate HistoryTemplate::from_json(const Json& j, HistoryTemplate schema) {
    for (const auto& [section_name, slots] : j.items()) {
        for (const auto& [slot_name, value] : slots.items()) {
            auto* slot = schema.find(section_name, slot_name);
            if (!slot) {
                throw Error(ErrorCode::invalid_argument,
                            "field '" + section_name + "/" + slot_name + "' is not in the history schema");
            }
            if (!value.is_null()) slot->value = value.get<std::string>();
        }
    }
    return schema;
}

// ---------------------------------------------------------------------------

std::vector<DdxEntry> normalize_ddx(std::vector<DdxEntry> ddx) {
    std::map<std::string, DdxEntry> best;
    for (auto& e : ddx) {
        e.disease_name = trim(e.disease_name);
        if (e.disease_name.empty()) continue;
        e.likelihood = std::clamp(e.likelihood, 0.0, 10.0);
        const auto key = normalize_text(e.disease_name);
        auto it = best.find(key);
        if (it == best.end() || e.likelihood > it->second.likelihood) best[key] = e;
    }
    std::vector<DdxEntry> out;
    for (auto& [_, e] : best) out.push_back(std::move(e));
    std::sort(out.begin(), out.end(), [](const DdxEntry& a, const DdxEntry& b) {
        if (a.likelihood != b.likelihood) return a.likelihood > b.likelihood;
        const auto na = normalize_text(a.disease_name), nb = normalize_text(b.disease_name);
        return na != nb ? na < nb : a.disease_name < b.disease_name;
    });
    return out;
}

std::vector<DdxEntry> top_ddx(const std::vector<DdxEntry>& ddx, std::size_t k) {
    auto sorted = normalize_ddx(ddx);
    if (sorted.size() > k) sorted.resize(k);
    return sorted;
}

Json ddx_to_json(const std::vector<DdxEntry>& ddx) {
    Json j = Json::array();
    for (const auto& e : ddx) {
        j.push_back({{"disease_name", e.disease_name}, {"likelihood", e.likelihood}, {"rationale", e.rationale}});
    }
    return j;
}

std::vector<DdxEntry> ddx_from_json(const Json& j) {
    std::vector<DdxEntry> out;
    if (!j.is_array()) return out;
    for (const auto& item : j) {
        if (!item.is_object()) continue;
        auto name = item.find("disease_name");
        auto likelihood = item.find("likelihood");
        if (name == item.end() || !name->is_string() || likelihood == item.end() ||
            !likelihood->is_number()) {
            continue;
        }
        DdxEntry e{name->get<std::string>(), likelihood->get<double>(), {}};
        if (auto r = item.find("rationale"); r != item.end() && r->is_string()) e.rationale = r->get<std::string>();
        out.push_back(std::move(e));
    }
    return out;
}

std::string_view to_string(DialogueStage stage) {
    switch (stage) {
        case DialogueStage::Main: return "Main";
        case DialogueStage::Other: return "Other";
        case DialogueStage::Ddx: return "Ddx";
        case DialogueStage::Done: return "Done";
    }
    return "Main";
}

DialogueStage dialogue_stage_from_string(std::string_view text) {
    for (auto s : {DialogueStage::Main, DialogueStage::Other, DialogueStage::Ddx, DialogueStage::Done}) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::invalid_argument, "unknown dialogue stage '" + std::string(text) + "'");
}

void validate(const HistoryConfig& config) {
    if (config.max_ddx_questions < 1) {
        throw Error(ErrorCode::invalid_argument, "max_ddx_questions must be positive");
    }
    if (config.max_questions_per_turn < 1 || config.max_questions_per_turn > 2) {
        throw Error(ErrorCode::invalid_argument, "max_questions_per_turn must be 1 or 2");
    }
}

Json to_json(const DialogueState& state) {
    Json messages = Json::array();
    for (const auto& m : state.messages) {
        messages.push_back({{"role", m.role}, {"text", m.text}, {"timestamp", format_rfc3339(m.at)}});
    }
    Json j = {{"state", to_string(state.stage)},
              {"messages", messages},
              {"main_template", state.main_template.to_json()},
              {"other_template", state.other_template.to_json()},
              {"ddx", ddx_to_json(state.ddx)},
              {"ddx_questions_asked", state.ddx_questions_asked},
              {"config",
               {{"max_ddx_questions", state.config.max_ddx_questions},
                {"max_questions_per_turn", state.config.max_questions_per_turn},
                {"refine_questions", state.config.refine_questions}}}};
    j["previous_top3"] = state.previous_top3 ? Json(*state.previous_top3) : Json(nullptr);
    return j;
}

DialogueState dialogue_state_from_json(const Json& j) {
    DialogueState s;
    s.stage = dialogue_stage_from_string(j.at("state").get<std::string>());
    for (const auto& m : j.at("messages")) {
        s.messages.push_back({m.at("role").get<std::string>(), m.at("text").get<std::string>(),
                              parse_rfc3339(m.at("timestamp").get<std::string>())});
    }
    s.main_template = HistoryTemplate::from_json(j.at("main_template"), make_main_template());
    s.other_template = HistoryTemplate::from_json(j.at("other_template"), make_other_template());
    s.ddx = ddx_from_json(j.at("ddx"));
    s.ddx_questions_asked = j.at("ddx_questions_asked").get<int>();
    s.previous_top3 = optional_field<std::vector<std::string>>(j, "previous_top3");
    const auto& c = j.at("config");
    s.config.max_ddx_questions = c.at("max_ddx_questions").get<int>();
    s.config.max_questions_per_turn = c.at("max_questions_per_turn").get<int>();
    s.config.refine_questions = c.value("refine_questions", false);
    return s;
}

// ---------------------------------------------------------------------------

std::string limit_questions(const std::string& text, int max_questions) {
    int seen = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '?' && ++seen == max_questions) return trim(text.substr(0, i + 1));
    }
    return trim(text);
}

std::string render_dialogue(const std::vector<Message>& messages) {
    std::string out;
    for (const auto& m : messages) {
        out += m.role == "patient" ? "Patient: " : "System: ";
        out += m.text;
        out += '\n';
    }
    return out;
}

std::string render_history_text(const History& h) {
    std::string out;
    for (const auto* t : {&h.main_template, &h.other_template}) {
        for (const auto& s : t->sections) {
            out += s.name + ":\n";
            for (const auto& slot : s.slots) {
                out += "  " + slot.name + ": " + (slot.value ? *slot.value : std::string("(not collected)")) + "\n";
            }
        }
    }
    return out;
}

namespace {

std::vector<std::string> top3_names(const std::vector<DdxEntry>& ddx) {
    std::vector<std::string> names;
    for (const auto& e : top_ddx(ddx, 3)) names.push_back(normalize_text(e.disease_name));
    std::sort(names.begin(), names.end());
    return names;
}

// Applies model-proposed slot values. Anything outside the template's schema
// is dropped and reported; null or empty values never clear a slot.
void apply_updates(HistoryTemplate& tmpl, const Json& updates, std::vector<HistoryDelta>& deltas,
                   std::vector<std::string>& rejected) {
    if (updates.is_null()) return;
    if (!updates.is_object()) {
        rejected.push_back("<template: not an object>");
        return;
    }
    for (const auto& [section_name, slots] : updates.items()) {
        if (!slots.is_object()) {
            rejected.push_back(section_name);
            continue;
        }
        for (const auto& [slot_name, value] : slots.items()) {
            auto* slot = tmpl.find(section_name, slot_name);
            if (!slot) {
                rejected.push_back(section_name + "/" + slot_name);
                continue;
            }
            std::string text;
            if (value.is_string()) {
                text = trim(value.get<std::string>());
            } else if (value.is_number()) {
                text = value.dump();
            } else if (value.is_null()) {
                continue;
            } else {
                rejected.push_back(section_name + "/" + slot_name);
                continue;
            }
            if (text.empty() || (slot->value && *slot->value == text)) continue;
            slot->value = text;
            deltas.push_back({section_name, slot_name, text});
        }
    }
}

std::string question_from(const Json& reply, TemplateId id) {
    auto it = reply.find("question");
    if (it == reply.end() || !it->is_string() || trim(it->get<std::string>()).empty()) {
        throw Error(ErrorCode::gateway,
                    "'" + std::string(to_string(id)) + "' reply lacks a question", true);
    }
    return it->get<std::string>();
}

} // namespace

std::string_view to_string(StopReason r) {
    switch (r) {
        case StopReason::none: return "none";
        case StopReason::converged: return "converged";
        case StopReason::question_cap: return "question_cap";
    }
    return "none";
}

StopReason stop_reason(const DialogueState& state) {
    if (state.ddx.size() >= 3 && state.previous_top3 && top3_names(state.ddx) == *state.previous_top3) {
        return StopReason::converged;
    }
    if (state.ddx_questions_asked >= state.config.max_ddx_questions) return StopReason::question_cap;
    return StopReason::none;
}

bool stopping_criteria(const DialogueState& state) { return stop_reason(state) != StopReason::none; }

DialogueState start_session(const HistoryConfig& config, Gateway& gateway, const Clock& clock) {
    validate(config);
    DialogueState state;
    state.config = config;
    const auto greeting = gateway.call(TemplateId::greeting, {}).get<std::string>();
    state.messages.push_back({"system", greeting, clock.now()});
    return state;
}

StepResult step(const DialogueState& state, const std::string& utterance, Gateway& gateway,
                const Clock& clock) {
    if (state.stage == DialogueStage::Done) {
        throw Error(ErrorCode::invalid_state, "dialogue is already complete");
    }
    StepResult result{state, {}, {}, {}};
    auto& next = result.state;
    next.messages.push_back({"patient", utterance, clock.now()});
    const auto max_q = std::to_string(next.config.max_questions_per_turn);

    std::string question;
    if (next.stage == DialogueStage::Main || next.stage == DialogueStage::Other) {
        const bool main = next.stage == DialogueStage::Main;
        auto& tmpl = main ? next.main_template : next.other_template;
        const auto reply = gateway.call(TemplateId::update_by_dialogue,
                                        {{"stage", main ? "main" : "other"},
                                         {"dialogue", render_dialogue(next.messages)},
                                         {"template", tmpl.to_json().dump(2)},
                                         {"max_questions", max_q}});
        question = question_from(reply, TemplateId::update_by_dialogue);
        apply_updates(tmpl, reply.contains("template") ? reply["template"] : Json(nullptr),
                      result.deltas, result.rejected_fields);
        if (main && next.main_template.completed()) {
            next.stage = DialogueStage::Other;
        } else if (!main && next.other_template.completed()) {
            const auto ddx_reply = gateway.call(
                TemplateId::generate_preliminary_ddx,
                {{"history", render_history_text({next.main_template, next.other_template})}});
            next.ddx = normalize_ddx(ddx_from_json(ddx_reply.contains("ddx") ? ddx_reply["ddx"] : Json()));
            next.previous_top3.reset();
            next.stage = DialogueStage::Ddx;
        }
    } else {
        const auto before = top3_names(next.ddx);
        const auto reply = gateway.call(TemplateId::targeted_update,
                                        {{"dialogue", render_dialogue(next.messages)},
                                         {"main_template", next.main_template.to_json().dump(2)},
                                         {"other_template", next.other_template.to_json().dump(2)},
                                         {"ddx", ddx_to_json(next.ddx).dump(2)},
                                         {"max_questions", max_q}});
        question = question_from(reply, TemplateId::targeted_update);
        apply_updates(next.main_template,
                      reply.contains("main_template") ? reply["main_template"] : Json(nullptr),
                      result.deltas, result.rejected_fields);
        apply_updates(next.other_template,
                      reply.contains("other_template") ? reply["other_template"] : Json(nullptr),
                      result.deltas, result.rejected_fields);
        if (auto updated = normalize_ddx(ddx_from_json(reply.contains("ddx") ? reply["ddx"] : Json()));
            !updated.empty()) {
            next.ddx = std::move(updated);
        }
        next.previous_top3 = before;
        ++next.ddx_questions_asked;
        if (stopping_criteria(next)) next.stage = DialogueStage::Done;
    }

    for (const auto& field : result.rejected_fields) {
        spdlog::warn("dropped non-template field '{}' from model output", field);
    }

    if (next.stage == DialogueStage::Done) {
        result.prompt = std::string(kCompletionNotice);
    } else {
        if (next.config.refine_questions) {
            question = gateway.call(TemplateId::refine_question,
                                    {{"question", question}, {"max_questions", max_q}})
                           .get<std::string>();
        }
        result.prompt = limit_questions(question, next.config.max_questions_per_turn);
    }
    next.messages.push_back({"system", result.prompt, clock.now()});
    return result;
}

HistoryExport finish(const DialogueState& state) {
    if (state.stage != DialogueStage::Done) {
        throw Error(ErrorCode::invalid_state,
                    "history is not complete (state " + std::string(to_string(state.stage)) + ")");
    }
    return {{state.main_template, state.other_template}, top_ddx(state.ddx, 3)};
}

Json history_to_json(const History& h) {
    return {{"main_template", h.main_template.to_json()}, {"other_template", h.other_template.to_json()}};
}

Json history_export_to_json(const HistoryExport& h) {
    Json j = history_to_json(h.history);
    j["preliminary_ddx"] = ddx_to_json(h.preliminary_ddx);
    return j;
}

} // namespace kgdx
