#include "test_support.hpp"

#include "kgdx/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>

namespace kgdx::test {

namespace fs = std::filesystem;

namespace {
constexpr std::size_t kInf = std::numeric_limits<std::size_t>::max() / 4;
}

DistanceOracle::DistanceOracle(const KnowledgeGraph& graph) {
    for (const auto& e : graph.entities()) index_.emplace(e.id, index_.size());
    const auto n = index_.size();
    dist_.assign(n, std::vector<std::size_t>(n, kInf));
    for (std::size_t i = 0; i < n; ++i) dist_[i][i] = 0;
    for (const auto& t : graph.triples()) {
        const auto a = index_.at(t.subject), b = index_.at(t.object);
        if (a == b) continue;
        dist_[a][b] = dist_[b][a] = 1;
    }
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (dist_[i][k] + dist_[k][j] < dist_[i][j]) dist_[i][j] = dist_[i][k] + dist_[k][j];
            }
        }
    }
}

std::optional<std::size_t> DistanceOracle::distance(const std::string& a, const std::string& b) const {
    const auto d = dist_.at(index_.at(a)).at(index_.at(b));
    if (d >= kInf) return std::nullopt;
    return d;
}

double oracle_kg_score(const DistanceOracle& oracle, const std::string& disease, const std::vector<std::string>& linked) {
    std::set<std::string> seen;
    double score = 0.0;
    for (const auto& s : linked) {
        if (!seen.insert(s).second) continue;
        const auto d = oracle.distance(disease, s);
        if (d && *d > 0) score += 1.0 / static_cast<double>(*d);
    }
    return score;
}

namespace {

Vector normalized(Vector v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0) {
        for (double& x : v) x /= n;
    }
    return v;
}

double dot(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

OracleMatch oracle_link(const std::string& mention, const std::vector<std::pair<std::string, std::string>>& entities,
                        const EmbeddingProvider& provider, double threshold) {
    const auto q = normalized(provider.embed(mention));
    OracleMatch best;
    std::optional<std::string> best_id;
    for (const auto& [id, name] : entities) {
        const double s = dot(q, normalized(provider.embed(name)));
        if (!best_id || s > best.similarity || (s == best.similarity && id < *best_id)) {
            best.similarity = s;
            best_id = id;
        }
    }
    if (best_id && best.similarity >= threshold) best.id = best_id;
    return best;
}

// ---------------------------------------------------------------------------

std::string random_name(std::mt19937_64& rng, std::size_t min_words, std::size_t max_words) {
    static const char* syllables[] = {"ka", "lo", "mi", "ren", "tu", "sa", "vor", "ne", "pi", "dal",
                                      "xo", "fen", "gri", "bu", "hal", "zu", "qui", "mor", "te", "wy"};
    std::uniform_int_distribution<std::size_t> words(min_words, max_words);
    std::uniform_int_distribution<std::size_t> syl(2, 3);
    std::uniform_int_distribution<std::size_t> pick(0, std::size(syllables) - 1);
    std::string out;
    const auto w = words(rng);
    for (std::size_t i = 0; i < w; ++i) {
        if (i) out += ' ';
        const auto s = syl(rng);
        for (std::size_t j = 0; j < s; ++j) out += syllables[pick(rng)];
    }
    return out;
}

RandomCase random_case(std::mt19937_64& rng, const RandomGraphSpec& spec) {
    RandomCase c;
    std::uniform_int_distribution<std::size_t> size(4, spec.max_nodes);
    const auto n = size(rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        EntityKind kind;
        // The first two nodes guarantee one disease and one symptom.
        const double r = i == 0 ? 0.0 : i == 1 ? 0.3 : unit(rng);
        std::string prefix;
        if (r < 0.25) {
            kind = EntityKind::disease;
            prefix = "d";
        } else if (r < 0.65) {
            kind = EntityKind::symptom;
            prefix = "s";
        } else if (r < 0.8) {
            kind = EntityKind::drug;
            prefix = "r";
        } else {
            kind = EntityKind::other;
            prefix = "o";
        }
        Entity e;
        e.id = prefix + std::to_string(i);
        e.name = "node " + std::to_string(i);
        e.kind = kind;
        if (kind == EntityKind::disease) {
            e.severity = static_cast<int>(i % 11);
            c.diseases.push_back(e.id);
        }
        if (kind == EntityKind::symptom) c.symptoms.push_back(e.id);
        ids.push_back(e.id);
        c.graph.add_entity(std::move(e));
    }
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const auto edges = static_cast<std::size_t>(spec.edge_factor * static_cast<double>(n) * unit(rng));
    for (std::size_t i = 0; i < edges; ++i) {
        const auto a = pick(rng), b = pick(rng);
        if (a == b) continue;
        Triple t;
        t.subject = ids[a];
        t.object = ids[b];
        t.relation = unit(rng) < 0.5 ? "has_symptom" : "related_to";
        if (c.graph.contains(t.key())) continue;
        c.graph.add_triple(std::move(t));
    }
    std::vector<std::string> pool = c.symptoms;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::uniform_int_distribution<std::size_t> count(1, std::min(spec.max_linked, pool.size()));
    pool.resize(count(rng));
    c.linked = pool;
    return c;
}

// ---------------------------------------------------------------------------

KnowledgeGraph fixture_graph() { return load_fixture_graph(); }

fs::path scenarios_dir() { return default_data_dir() / "scenarios"; }

std::vector<fs::path> scenario_files() {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(scenarios_dir())) {
        if (e.path().extension() == ".json") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

Entity make_entity(std::string id, std::string name, EntityKind kind, std::optional<int> severity) {
    Entity e;
    e.id = std::move(id);
    e.name = std::move(name);
    e.kind = kind;
    e.severity = severity;
    return e;
}

Triple make_triple(std::string s, std::string r, std::string o, std::uint64_t usage,
                   std::optional<std::string> reviewed_at) {
    Triple t;
    t.subject = std::move(s);
    t.relation = std::move(r);
    t.object = std::move(o);
    t.usage_count = usage;
    t.provenance.source = ProvenanceSource::seed_import;
    if (reviewed_at) {
        t.provenance.reviewer = "dr-reviewer";
        t.provenance.reviewed_at = parse_rfc3339(*reviewed_at);
    }
    return t;
}

KnowledgeGraph tiny_graph() {
    KnowledgeGraph g;
    g.add_entity(make_entity("d-a", "alpha fever", EntityKind::disease, 4));
    g.add_entity(make_entity("d-b", "beta cough", EntityKind::disease, 7));
    g.add_entity(make_entity("s-shared", "shared ache", EntityKind::symptom));
    g.add_entity(make_entity("s-a", "alpha rash", EntityKind::symptom));
    g.add_entity(make_entity("s-b", "beta wheeze", EntityKind::symptom));
    g.add_entity(make_entity("dr-x", "xylomab", EntityKind::drug));
    auto def = make_entity("def-a", "alpha definition", EntityKind::definition);
    def.definition_text = "A made-up fever.";
    g.add_entity(def);
    g.add_triple(make_triple("d-a", "has_symptom", "s-shared"));
    g.add_triple(make_triple("d-b", "has_symptom", "s-shared"));
    g.add_triple(make_triple("d-a", "has_symptom", "s-a"));
    g.add_triple(make_triple("d-b", "has_symptom", "s-b"));
    g.add_triple(make_triple("dr-x", "treats", "d-a"));
    g.add_triple(make_triple("d-a", "has_definition", "def-a"));
    return g;
}

ScriptEntry entry(TemplateId id, std::string response) { return {id, std::move(response)}; }

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("kgdx-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

ServiceHarness make_service(KnowledgeGraph graph, std::vector<ScriptEntry> script,
                            std::optional<fs::path> sessions_dir, std::shared_ptr<GraphStore> store,
                            std::shared_ptr<Worklist> worklist) {
    ServiceHarness h;
    h.clock = std::make_shared<ManualClock>(parse_rfc3339("2026-03-02T09:00:00Z"), std::chrono::seconds{1});
    h.provider = std::make_shared<ScriptedMockProvider>(script);
    ServiceOptions o;
    o.config.tokens = {{"tok-patient", kPatient},     {"tok-patient-2", kOtherPatient},
                       {"tok-physician", kPhysician}, {"tok-physician-2", kOtherPhysician},
                       {"tok-expert", kExpert}};
    o.store = store ? std::move(store) : std::make_shared<GraphStore>(std::move(graph));
    o.worklist = worklist ? std::move(worklist) : std::make_shared<Worklist>();
    o.embedder = make_embedding_provider(o.config.embedding);
    o.prompts = std::make_shared<const PromptLibrary>(PromptLibrary::load_default());
    auto provider = h.provider;
    o.session_provider = [provider](const std::string&) { return provider; };
    o.expert_provider = provider;
    o.clock = h.clock;
    o.sessions_dir = std::move(sessions_dir);
    h.service = std::make_unique<Service>(std::move(o));
    return h;
}

std::vector<ScriptEntry> eye_strain_script() {
    return load_pack(scenarios_dir() / "01-eye-strain-headache.json").llm_script;
}

std::vector<std::string> eye_strain_utterances() {
    return load_pack(scenarios_dir() / "01-eye-strain-headache.json").patient_script;
}

} // namespace kgdx::test
