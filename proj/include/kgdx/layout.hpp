#pragma once

#include "kgdx/kg_store.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kgdx {

// `context` holds nodes revealed by expansion (path intermediates and drug
// neighbors); the other five are the diagnostic view's fixed categories.
enum class LayoutCategory { diagnosis, common_symptom, patient_symptom, definition, drug, context };

std::string_view to_string(LayoutCategory c);
LayoutCategory layout_category_from_string(std::string_view text);
std::string_view color_key(LayoutCategory c);

struct LayoutNode {
    std::string id;
    std::string name;
    LayoutCategory category = LayoutCategory::context;
    double x = 0.0;
    double y = 0.0;
    bool faded = false;
    std::optional<int> collapsed_path_length;  // patient symptoms
    bool expanded = false;
    bool detail_open = false;  // definition bubbles
    std::vector<std::string> owners;  // diagnoses this node belongs to
    std::optional<int> severity;      // diagnoses
};

struct LayoutEdge {
    std::string from;
    std::string to;
    std::string relation;  // empty for collapsed path summaries
    bool emphasized = false;
    bool faded = false;
    std::optional<int> path_length;
};

struct LayoutResult {
    std::string mode = "global";  // global | focus
    std::optional<std::string> focus;
    double width = 1000.0;
    double height = 1000.0;
    std::vector<std::string> diagnoses;
    std::vector<LayoutNode> nodes;
    std::vector<LayoutEdge> edges;

    const LayoutNode* node(const std::string& id) const;
};

Json to_json(const LayoutResult& layout);
LayoutResult layout_from_json(const Json& j);

struct LayoutOptions {
    std::size_t k = 3;
    double width = 1000.0;
    double height = 1000.0;
    std::optional<int> min_severity;
};

// Geometry constants as fractions of min(width, height).
inline constexpr double kPolygonRadius = 0.35;
inline constexpr double kCommonClusterRadius = 0.1;
inline constexpr double kPatientRingRadius = 0.2;
inline constexpr double kOwnedArcRadius = 0.12;
inline constexpr double kFocusRadius = 0.3;
inline constexpr double kDrugRingRadius = 0.06;

struct Sector {
    double start_deg;
    double span_deg;
};

// Focus-mode sectors, counter-clockwise from the positive x axis.
Sector focus_sector(LayoutCategory c);

// Screen coordinates of the point at `angle_deg` (counter-clockwise, 0° to
// the right, 90° up) and `radius` from (cx, cy); y grows downward.
std::pair<double, double> polar(double cx, double cy, double radius, double angle_deg);

// Diagnoses sit on a regular polygon (angles 90° + i·360°/n); symptoms
// adjacent to every diagnosis cluster at the centre; patient symptoms ring
// the centre, collapsed to their path length; other neighbors sit on arcs
// beyond their diagnosis.
LayoutResult global_layout(const KnowledgeGraph& graph, const std::vector<std::string>& diagnoses,
                           const std::vector<std::string>& patient_symptoms, const LayoutOptions& options = {});

// Centres `selected`, fans its related nodes into per-category sectors and
// fades everything else in place. Expansion state is not carried over.
LayoutResult focus_layout(const LayoutResult& global, const std::string& selected);

// Idempotent. Patient symptoms reveal their shortest path, drugs one ring of
// neighbors, definitions open their detail bubble.
LayoutResult expand_node(LayoutResult layout, const std::string& entity_id, const KnowledgeGraph& graph);

} // namespace kgdx
