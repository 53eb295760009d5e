#include "kgdx/layout.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

namespace kgdx {

std::string_view to_string(LayoutCategory c) {
    switch (c) {
        case LayoutCategory::diagnosis: return "diagnosis";
        case LayoutCategory::common_symptom: return "common_symptom";
        case LayoutCategory::patient_symptom: return "patient_symptom";
        case LayoutCategory::definition: return "definition";
        case LayoutCategory::drug: return "drug";
        case LayoutCategory::context: return "context";
    }
    return "context";
}

LayoutCategory layout_category_from_string(std::string_view text) {
    for (auto c : {LayoutCategory::diagnosis, LayoutCategory::common_symptom, LayoutCategory::patient_symptom,
                   LayoutCategory::definition, LayoutCategory::drug, LayoutCategory::context}) {
        if (to_string(c) == text) return c;
    }
    throw Error(ErrorCode::invalid_argument, "unknown layout category '" + std::string(text) + "'");
}

std::string_view color_key(LayoutCategory c) {
    switch (c) {
        case LayoutCategory::diagnosis: return "diagnosis";
        case LayoutCategory::common_symptom: return "yellow_common";
        case LayoutCategory::patient_symptom: return "purple_patient";
        case LayoutCategory::definition: return "blue_definition";
        case LayoutCategory::drug: return "green_drug";
        case LayoutCategory::context: return "gray_context";
    }
    return "gray_context";
}

Sector focus_sector(LayoutCategory c) {
    switch (c) {
        case LayoutCategory::common_symptom: return {0.0, 144.0};
        case LayoutCategory::drug: return {144.0, 72.0};
        case LayoutCategory::definition: return {216.0, 72.0};
        case LayoutCategory::patient_symptom: return {288.0, 72.0};
        default: break;
    }
    throw Error(ErrorCode::invalid_argument, "category '" + std::string(to_string(c)) + "' has no focus sector");
}

std::pair<double, double> polar(double cx, double cy, double radius, double angle_deg) {
    const double a = angle_deg * std::numbers::pi / 180.0;
    return {cx + radius * std::cos(a), cy - radius * std::sin(a)};
}

const LayoutNode* LayoutResult::node(const std::string& id) const {
    for (const auto& n : nodes) {
        if (n.id == id) return &n;
    }
    return nullptr;
}

Json to_json(const LayoutResult& layout) {
    Json nodes = Json::array();
    for (const auto& n : layout.nodes) {
        Json j = {{"id", n.id},
                  {"name", n.name},
                  {"x", n.x},
                  {"y", n.y},
                  {"category", to_string(n.category)},
                  {"color_key", color_key(n.category)},
                  {"faded", n.faded},
                  {"expanded", n.expanded},
                  {"detail_open", n.detail_open},
                  {"owners", n.owners}};
        if (n.collapsed_path_length) j["collapsed_path_length"] = *n.collapsed_path_length;
        if (n.severity) j["severity"] = *n.severity;
        nodes.push_back(std::move(j));
    }
    Json edges = Json::array();
    for (const auto& e : layout.edges) {
        Json j = {{"from", e.from},
                  {"to", e.to},
                  {"relation", e.relation},
                  {"emphasized", e.emphasized},
                  {"faded", e.faded}};
        if (e.path_length) j["path_length"] = *e.path_length;
        edges.push_back(std::move(j));
    }
    return {{"mode", layout.mode},
            {"focus", layout.focus ? Json(*layout.focus) : Json(nullptr)},
            {"width", layout.width},
            {"height", layout.height},
            {"diagnoses", layout.diagnoses},
            {"nodes", nodes},
            {"edges", edges}};
}

LayoutResult layout_from_json(const Json& j) {
    LayoutResult l;
    l.mode = j.at("mode").get<std::string>();
    l.focus = optional_field<std::string>(j, "focus");
    l.width = j.at("width").get<double>();
    l.height = j.at("height").get<double>();
    l.diagnoses = j.at("diagnoses").get<std::vector<std::string>>();
    for (const auto& n : j.at("nodes")) {
        LayoutNode node;
        node.id = n.at("id").get<std::string>();
        node.name = n.value("name", "");
        node.category = layout_category_from_string(n.at("category").get<std::string>());
        node.x = n.at("x").get<double>();
        node.y = n.at("y").get<double>();
        node.faded = n.value("faded", false);
        node.collapsed_path_length = optional_field<int>(n, "collapsed_path_length");
        node.expanded = n.value("expanded", false);
        node.detail_open = n.value("detail_open", false);
        node.owners = n.value("owners", std::vector<std::string>{});
        node.severity = optional_field<int>(n, "severity");
        l.nodes.push_back(std::move(node));
    }
    for (const auto& e : j.at("edges")) {
        l.edges.push_back({e.at("from").get<std::string>(), e.at("to").get<std::string>(), e.value("relation", ""),
                           e.value("emphasized", false), e.value("faded", false),
                           optional_field<int>(e, "path_length")});
    }
    return l;
}

// ---------------------------------------------------------------------------

namespace {

LayoutCategory category_of(EntityKind kind) {
    switch (kind) {
        case EntityKind::symptom: return LayoutCategory::common_symptom;
        case EntityKind::definition: return LayoutCategory::definition;
        case EntityKind::drug: return LayoutCategory::drug;
        default: return LayoutCategory::context;
    }
}

bool has_edge(const LayoutResult& l, const std::string& a, const std::string& b) {
    return std::any_of(l.edges.begin(), l.edges.end(), [&](const LayoutEdge& e) {
        return (e.from == a && e.to == b) || (e.from == b && e.to == a);
    });
}

LayoutNode* find_node(LayoutResult& l, const std::string& id) {
    for (auto& n : l.nodes) {
        if (n.id == id) return &n;
    }
    return nullptr;
}

} // namespace

LayoutResult global_layout(const KnowledgeGraph& graph, const std::vector<std::string>& diagnoses,
                           const std::vector<std::string>& patient_symptoms, const LayoutOptions& options) {
    if (options.k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
    if (!(options.width > 0.0 && options.height > 0.0)) {
        throw Error(ErrorCode::invalid_argument, "canvas dimensions must be positive");
    }

    LayoutResult out;
    out.width = options.width;
    out.height = options.height;
    const double m = std::min(options.width, options.height);
    const double cx = options.width / 2.0, cy = options.height / 2.0;

    std::vector<const Entity*> shown;
    for (const auto& id : diagnoses) {
        const auto& e = graph.entity(id);
        if (options.min_severity && e.severity.value_or(0) < *options.min_severity) continue;
        if (std::any_of(shown.begin(), shown.end(), [&](const Entity* s) { return s->id == id; })) continue;
        shown.push_back(&e);
        if (shown.size() == options.k) break;
    }
    const std::size_t n = shown.size();
    for (const auto* d : shown) out.diagnoses.push_back(d->id);

    std::vector<double> vertex_angle(n);
    for (std::size_t i = 0; i < n; ++i) {
        vertex_angle[i] = 90.0 + 360.0 * static_cast<double>(i) / static_cast<double>(n);
        LayoutNode node;
        node.id = shown[i]->id;
        node.name = shown[i]->name;
        node.category = LayoutCategory::diagnosis;
        std::tie(node.x, node.y) = n == 1 ? std::pair{cx, cy} : polar(cx, cy, kPolygonRadius * m, vertex_angle[i]);
        node.owners = {shown[i]->id};
        node.severity = shown[i]->severity.value_or(0);
        out.nodes.push_back(std::move(node));
    }

    // Ownership of every one-hop neighbor, in diagnosis order.
    std::map<std::string, std::vector<std::size_t>> owners_of;
    std::vector<std::vector<Neighbor>> owned(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& nb : graph.one_hop_neighbors(shown[i]->id)) {
            if (nb.entity.kind == EntityKind::disease || nb.entity.kind == EntityKind::other) continue;
            auto& list = owners_of[nb.entity.id];
            if (list.empty() || list.back() != i) list.push_back(i);
            owned[i].push_back(std::move(nb));
        }
    }

    std::set<std::string> patient;
    std::vector<std::string> patient_order;
    for (const auto& s : patient_symptoms) {
        if (graph.contains(s) && patient.insert(s).second) patient_order.push_back(s);
    }

    std::set<std::string> placed(out.diagnoses.begin(), out.diagnoses.end());
    auto owner_ids = [&](const std::vector<std::size_t>& idx) {
        std::vector<std::string> ids;
        for (auto i : idx) ids.push_back(shown[i]->id);
        return ids;
    };

    // Symptoms adjacent to every diagnosis.
    std::vector<std::string> common;
    if (n >= 2) {
        for (const auto& [id, idx] : owners_of) {
            if (idx.size() == n && graph.entity(id).kind == EntityKind::symptom) common.push_back(id);
        }
    }
    for (std::size_t j = 0; j < common.size(); ++j) {
        const auto& e = graph.entity(common[j]);
        LayoutNode node;
        node.id = e.id;
        node.name = e.name;
        node.category = patient.count(e.id) ? LayoutCategory::patient_symptom : LayoutCategory::common_symptom;
        const double r = common.size() == 1 ? 0.0 : 0.6 * kCommonClusterRadius * m;
        std::tie(node.x, node.y) = polar(cx, cy, r, 90.0 + 360.0 * static_cast<double>(j) / common.size());
        node.owners = owner_ids(owners_of[e.id]);
        out.nodes.push_back(std::move(node));
        placed.insert(e.id);
    }

    // Patient symptoms: distance from each diagnosis.
    std::map<std::string, std::map<std::string, std::size_t>> patient_dist;
    for (const auto* d : shown) {
        const auto dist = graph.distances_from(d->id);
        for (const auto& s : patient_order) {
            if (auto it = dist.find(s); it != dist.end()) patient_dist[s][d->id] = it->second;
        }
    }
    std::vector<std::string> ring;
    for (const auto& s : patient_order) {
        if (!placed.count(s)) ring.push_back(s);
    }
    for (std::size_t j = 0; j < ring.size(); ++j) {
        const auto& e = graph.entity(ring[j]);
        LayoutNode node;
        node.id = e.id;
        node.name = e.name;
        node.category = LayoutCategory::patient_symptom;
        const double offset = n >= 1 ? 180.0 / static_cast<double>(std::max<std::size_t>(n, 1)) : 0.0;
        std::tie(node.x, node.y) = polar(cx, cy, kPatientRingRadius * m,
                                         90.0 + offset + 360.0 * static_cast<double>(j) / ring.size());
        out.nodes.push_back(std::move(node));
        placed.insert(e.id);
    }
    for (auto& node : out.nodes) {
        if (node.category != LayoutCategory::patient_symptom) continue;
        std::optional<int> best;
        node.owners.clear();
        for (const auto* d : shown) {
            auto& dists = patient_dist[node.id];
            if (auto it = dists.find(d->id); it != dists.end()) {
                node.owners.push_back(d->id);
                const int len = static_cast<int>(it->second);
                if (!best || len < *best) best = len;
            }
        }
        node.collapsed_path_length = best;
    }

    // Remaining neighbors on an outward arc beyond their first owner.
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<const Entity*> items;
        std::set<std::string> seen;
        for (auto kind : {EntityKind::symptom, EntityKind::definition, EntityKind::drug}) {
            for (const auto& nb : owned[i]) {
                if (nb.entity.kind != kind || placed.count(nb.entity.id) || !seen.insert(nb.entity.id).second) continue;
                items.push_back(&graph.entity(nb.entity.id));
            }
        }
        const auto& anchor = out.nodes[i];
        const double span = n == 1 ? 360.0 : 180.0;
        const double start = n == 1 ? 90.0 : vertex_angle[i] - 90.0;
        for (std::size_t j = 0; j < items.size(); ++j) {
            LayoutNode node;
            node.id = items[j]->id;
            node.name = items[j]->name;
            node.category = category_of(items[j]->kind);
            const double frac = n == 1 ? static_cast<double>(j) / items.size()
                                       : static_cast<double>(j + 1) / (items.size() + 1);
            std::tie(node.x, node.y) = polar(anchor.x, anchor.y, (n == 1 ? 0.25 : kOwnedArcRadius) * m,
                                             start + span * frac);
            node.owners = owner_ids(owners_of[items[j]->id]);
            out.nodes.push_back(std::move(node));
            placed.insert(items[j]->id);
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& nb : owned[i]) {
            if (!placed.count(nb.entity.id) || has_edge(out, nb.triple.subject, nb.triple.object)) continue;
            LayoutEdge e{nb.triple.subject, nb.triple.object, nb.triple.relation, false, false, std::nullopt};
            if (patient.count(nb.entity.id)) e.path_length = 1;
            out.edges.push_back(std::move(e));
        }
    }
    for (const auto& s : patient_order) {
        for (const auto* d : shown) {
            auto& dists = patient_dist[s];
            auto it = dists.find(d->id);
            if (it == dists.end() || it->second < 2) continue;
            out.edges.push_back({d->id, s, "", false, false, static_cast<int>(it->second)});
        }
    }
    return out;
}

LayoutResult focus_layout(const LayoutResult& global, const std::string& selected) {
    if (std::find(global.diagnoses.begin(), global.diagnoses.end(), selected) == global.diagnoses.end()) {
        throw Error(ErrorCode::not_found, "'" + selected + "' is not one of the current diagnoses");
    }
    LayoutResult out = global;
    out.mode = "focus";
    out.focus = selected;
    const double m = std::min(out.width, out.height);
    const double cx = out.width / 2.0, cy = out.height / 2.0;

    std::erase_if(out.nodes, [](const LayoutNode& n) { return n.category == LayoutCategory::context; });
    std::set<std::string> kept;
    for (const auto& n : out.nodes) kept.insert(n.id);
    std::erase_if(out.edges, [&](const LayoutEdge& e) { return !kept.count(e.from) || !kept.count(e.to); });

    std::map<LayoutCategory, std::vector<LayoutNode*>> related;
    for (auto& node : out.nodes) {
        node.expanded = false;
        node.detail_open = false;
        if (node.id == selected) {
            node.x = cx;
            node.y = cy;
            node.faded = false;
            continue;
        }
        const bool mine = node.category != LayoutCategory::diagnosis &&
                          std::find(node.owners.begin(), node.owners.end(), selected) != node.owners.end();
        node.faded = !mine;
        if (mine) related[node.category].push_back(&node);
    }
    for (auto& [category, nodes] : related) {
        const auto sector = focus_sector(category);
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            const double angle = sector.start_deg + sector.span_deg * static_cast<double>(j + 1) / (nodes.size() + 1);
            std::tie(nodes[j]->x, nodes[j]->y) = polar(cx, cy, kFocusRadius * m, angle);
        }
    }
    for (auto& e : out.edges) {
        const bool mine = e.from == selected || e.to == selected;
        e.emphasized = mine;
        e.faded = !mine;
    }
    return out;
}

LayoutResult expand_node(LayoutResult layout, const std::string& entity_id, const KnowledgeGraph& graph) {
    auto* target = find_node(layout, entity_id);
    if (!target) throw Error(ErrorCode::not_found, "'" + entity_id + "' is not in the layout");
    if (target->expanded) return layout;
    const double m = std::min(layout.width, layout.height);
    const bool focus = layout.mode == "focus" && layout.focus;

    if (target->category == LayoutCategory::definition) {
        target->detail_open = true;
        target->expanded = true;
        return layout;
    }

    auto add_context = [&](const std::string& id, double x, double y, const std::string& owner) {
        if (find_node(layout, id)) return;
        const auto& e = graph.entity(id);
        LayoutNode node;
        node.id = id;
        node.name = e.name;
        node.category = LayoutCategory::context;
        node.x = x;
        node.y = y;
        node.owners = {owner};
        layout.nodes.push_back(std::move(node));
    };
    auto add_edge = [&](const std::string& a, const std::string& b, bool emphasized) {
        if (has_edge(layout, a, b)) return;
        const auto key = graph.edge_between(a, b);
        LayoutEdge e{key ? key->subject : a, key ? key->object : b, key ? key->relation : "", emphasized, false,
                     std::nullopt};
        layout.edges.push_back(std::move(e));
    };

    if (target->category == LayoutCategory::patient_symptom) {
        std::optional<std::string> anchor;
        if (focus) {
            anchor = *layout.focus;
        } else {
            std::optional<std::size_t> best;
            for (const auto& d : layout.diagnoses) {
                auto dist = graph.shortest_path_distance(d, entity_id);
                if (dist && (!best || *dist < *best)) {
                    best = dist;
                    anchor = d;
                }
            }
        }
        target->expanded = true;
        if (!anchor) return layout;
        const auto path = graph.shortest_path(*anchor, entity_id);
        if (!path) return layout;
        const auto* from = find_node(layout, *anchor);
        const double ax = from->x, ay = from->y;
        const auto* to = find_node(layout, entity_id);
        const double bx = to->x, by = to->y;
        const double steps = static_cast<double>(path->size() - 1);
        for (std::size_t i = 1; i + 1 < path->size(); ++i) {
            const double t = static_cast<double>(i) / steps;
            add_context((*path)[i], ax + (bx - ax) * t, ay + (by - ay) * t, *anchor);
        }
        for (std::size_t i = 0; i + 1 < path->size(); ++i) add_edge((*path)[i], (*path)[i + 1], focus);
        return layout;
    }

    if (target->category == LayoutCategory::drug) {
        target->expanded = true;
        const double x = target->x, y = target->y;
        const auto owner = target->owners.empty() ? entity_id : target->owners.front();
        std::vector<std::string> fresh;
        for (const auto& id : graph.neighbor_ids(entity_id)) {
            if (!find_node(layout, id)) fresh.push_back(id);
        }
        for (std::size_t j = 0; j < fresh.size(); ++j) {
            const auto [nx, ny] = polar(x, y, kDrugRingRadius * m, 90.0 + 360.0 * static_cast<double>(j) / fresh.size());
            add_context(fresh[j], nx, ny, owner);
        }
        for (const auto& id : graph.neighbor_ids(entity_id)) {
            if (find_node(layout, id)) add_edge(entity_id, id, false);
        }
        return layout;
    }
    return layout;
}

} // namespace kgdx
