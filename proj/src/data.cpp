#include "graft/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>
#include <utility>

#include "graft/alignment.hpp"
#include "graft/error.hpp"
#include "json.hpp"

namespace graft {

namespace {

using nlohmann::json;

[[noreturn]] void fail(size_t line_no, const std::string& msg) {
    throw parse_error(msg, static_cast<int>(line_no));
}

void expect_object_fields(const json& j, const char* what,
                          std::initializer_list<const char*> fields, size_t line_no) {
    if (!j.is_object()) fail(line_no, std::string(what) + " must be a JSON object");
    for (const char* f : fields)
        if (!j.contains(f)) fail(line_no, std::string(what) + ": missing field '" + f + "'");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* f : fields)
            if (it.key() == f) {
                known = true;
                break;
            }
        if (!known) fail(line_no, std::string(what) + ": unknown field '" + it.key() + "'");
    }
}

size_t get_index(const json& j, const char* what, size_t line_no) {
    if (!j.is_number_unsigned())
        fail(line_no, std::string(what) + " must be a non-negative integer");
    return j.get<size_t>();
}

std::string get_string(const json& j, const char* what, size_t line_no) {
    if (!j.is_string()) fail(line_no, std::string(what) + " must be a string");
    return j.get<std::string>();
}

const json& get_array(const json& j, const char* field, const char* what, size_t line_no) {
    const json& a = j.at(field);
    if (!a.is_array()) fail(line_no, std::string(what) + ": '" + field + "' must be an array");
    return a;
}

json graph_to_json(const TypedGraph& g) {
    if (g.relation_names.size() != g.relation_count)
        throw contract_error("dataset graphs must name every relation");
    json nodes = json::array();
    for (const Node& n : g.nodes)
        nodes.push_back({{"id", n.id}, {"name", n.name}, {"type", n.type}});
    json edges = json::array();
    for (const Edge& e : g.edges)
        edges.push_back({{"src", e.src}, {"rel", e.rel}, {"dst", e.dst}});
    json out;
    out["relations"] = g.relation_names;
    out["node_types"] = g.node_type_count;
    out["nodes"] = std::move(nodes);
    out["edges"] = std::move(edges);
    return out;
}

TypedGraph graph_from_json(const json& j, const char* what, size_t line_no) {
    expect_object_fields(j, what, {"edges", "node_types", "nodes", "relations"}, line_no);
    TypedGraph g;
    for (const json& r : get_array(j, "relations", what, line_no))
        g.relation_names.push_back(get_string(r, "relation name", line_no));
    g.relation_count = g.relation_names.size();
    g.node_type_count = get_index(j.at("node_types"), "node_types", line_no);
    size_t next_id = 0;
    for (const json& nj : get_array(j, "nodes", what, line_no)) {
        expect_object_fields(nj, "node", {"id", "name", "type"}, line_no);
        Node n;
        n.id = get_index(nj.at("id"), "node id", line_no);
        if (n.id != next_id) fail(line_no, "node ids must be dense and in order");
        n.name = get_string(nj.at("name"), "node name", line_no);
        n.type = get_index(nj.at("type"), "node type", line_no);
        g.nodes.push_back(std::move(n));
        ++next_id;
    }
    for (const json& ej : get_array(j, "edges", what, line_no)) {
        expect_object_fields(ej, "edge", {"dst", "rel", "src"}, line_no);
        g.edges.push_back({get_index(ej.at("src"), "edge src", line_no),
                           get_index(ej.at("rel"), "edge rel", line_no),
                           get_index(ej.at("dst"), "edge dst", line_no)});
    }
    const auto violations = validate_graph(g);
    if (!violations.empty()) fail(line_no, std::string(what) + ": " + violations.front());
    return g;
}

std::vector<size_t> linked_from_json(const json& j, const char* field, const TypedGraph& g,
                                     const char* what, size_t line_no) {
    std::vector<size_t> ids;
    for (const json& v : get_array(j, field, what, line_no)) {
        const size_t id = get_index(v, field, line_no);
        if (id >= g.node_count())
            fail(line_no, std::string(what) + ": '" + field + "' node id out of range");
        ids.push_back(id);
    }
    return ids;
}

json record_json(const QaInstance& q) {
    json j;
    j["kind"] = task_kind_name(TaskKind::qa);
    j["id"] = q.id;
    j["question"] = q.question;
    j["choices"] = q.choices;
    j["gold"] = q.gold;
    j["linked"] = q.linked_node_ids;
    j["graph"] = graph_to_json(q.graph);
    return j;
}

json record_json(const PairInstance& p) {
    json j;
    j["kind"] = task_kind_name(TaskKind::pair);
    j["id"] = p.id;
    j["text"] = p.text;
    j["label"] = p.label;
    j["linked"] = p.linked_node_ids;
    j["graph"] = graph_to_json(p.graph);
    return j;
}

json record_json(const RetrievalInstance& r) {
    json j;
    j["kind"] = task_kind_name(TaskKind::retrieval);
    j["id"] = r.id;
    j["query_text"] = r.query_text;
    j["query_linked"] = r.query_linked_ids;
    j["query_graph"] = graph_to_json(r.query_graph);
    j["positive_text"] = r.positive_text;
    j["positive_linked"] = r.positive_linked_ids;
    j["positive_graph"] = graph_to_json(r.positive_graph);
    return j;
}

QaInstance qa_from_json(const json& j, size_t line_no) {
    expect_object_fields(
        j, "qa record", {"choices", "gold", "graph", "id", "kind", "linked", "question"},
        line_no);
    QaInstance q;
    q.id = get_string(j.at("id"), "id", line_no);
    q.graph = graph_from_json(j.at("graph"), "graph", line_no);
    q.linked_node_ids = linked_from_json(j, "linked", q.graph, "qa record", line_no);
    q.question = get_string(j.at("question"), "question", line_no);
    for (const json& c : get_array(j, "choices", "qa record", line_no))
        q.choices.push_back(get_string(c, "choice", line_no));
    if (q.choices.size() < 2) fail(line_no, "qa record: needs at least two choices");
    q.gold = get_index(j.at("gold"), "gold", line_no);
    if (q.gold >= q.choices.size()) fail(line_no, "qa record: gold index out of range");
    return q;
}

PairInstance pair_from_json(const json& j, size_t line_no) {
    expect_object_fields(j, "pair record", {"graph", "id", "kind", "label", "linked", "text"},
                         line_no);
    PairInstance p;
    p.id = get_string(j.at("id"), "id", line_no);
    p.graph = graph_from_json(j.at("graph"), "graph", line_no);
    p.linked_node_ids = linked_from_json(j, "linked", p.graph, "pair record", line_no);
    p.text = get_string(j.at("text"), "text", line_no);
    const json& lab = j.at("label");
    if (!lab.is_number_integer()) fail(line_no, "pair record: label must be an integer");
    p.label = lab.get<int>();
    if (p.label != 0 && p.label != 1) fail(line_no, "pair record: label must be 0 or 1");
    return p;
}

RetrievalInstance retrieval_from_json(const json& j, size_t line_no) {
    expect_object_fields(j, "retrieval record",
                         {"id", "kind", "positive_graph", "positive_linked", "positive_text",
                          "query_graph", "query_linked", "query_text"},
                         line_no);
    RetrievalInstance r;
    r.id = get_string(j.at("id"), "id", line_no);
    r.query_graph = graph_from_json(j.at("query_graph"), "query_graph", line_no);
    r.query_linked_ids =
        linked_from_json(j, "query_linked", r.query_graph, "retrieval record", line_no);
    r.query_text = get_string(j.at("query_text"), "query_text", line_no);
    r.positive_graph = graph_from_json(j.at("positive_graph"), "positive_graph", line_no);
    r.positive_linked_ids =
        linked_from_json(j, "positive_linked", r.positive_graph, "retrieval record", line_no);
    r.positive_text = get_string(j.at("positive_text"), "positive_text", line_no);
    return r;
}

// --- generation helpers ---------------------------------------------------

constexpr const char* kSplitNames[3] = {"train", "dev", "test"};

Rng split_rng(const GeneratorSpec& spec, TaskKind kind, const std::string& split) {
    return Rng(spec.seed ^ fnv1a64(task_kind_name(kind) + ":" + split));
}

size_t split_size(const GeneratorSpec& spec, size_t which) {
    return which == 0 ? spec.train_size : which == 1 ? spec.dev_size : spec.test_size;
}

std::string record_name(TaskKind kind, const std::string& split, size_t i) {
    return task_kind_name(kind) + "-" + split + "-" + std::to_string(i);
}

void mark_linked(TypedGraph& g, const std::vector<size_t>& ids) {
    for (size_t id : ids) g.nodes[id].type = kNodeTypeLinked;
}

std::vector<DataRecord> pair_split(const GeneratorSpec& spec, const std::string& split,
                                   const std::vector<std::string>& entities,
                                   const std::vector<std::string>& relations, size_t m) {
    std::vector<DataRecord> out;
    if (m == 0) return out;
    if (m < 2) throw config_error("pair splits need at least 2 records to form mismatches");
    Rng rng = split_rng(spec, TaskKind::pair, split);
    const size_t positives = (m + 1) / 2;

    struct Draft {
        TypedGraph graph;
        std::vector<size_t> linked;
        std::string text;
        int label = 0;
    };
    std::vector<Draft> drafts(m);

    if (spec.graph_sensitive) {
        for (size_t i = 0; i < m; ++i) {
            Draft& d = drafts[i];
            d.graph = random_graph(rng, spec, entities, relations, /*motif_free=*/true);
            d.label = i < positives ? 1 : 0;
            if (d.label == 1) {
                // the motif relation (id 0) appears only in positives
                const size_t inject = 1 + rng.uniform_int(3);
                const size_t n = d.graph.node_count();
                for (size_t k = 0; k < inject; ++k) {
                    const size_t s = rng.uniform_int(n);
                    size_t t = rng.uniform_int(n);
                    while (t == s) t = rng.uniform_int(n);
                    d.graph.edges.push_back({s, 0, t});
                }
            }
            // filler text from an unrelated motif-free graph: plausible
            // surface form, zero information about the label
            const TypedGraph filler =
                random_graph(rng, spec, entities, relations, /*motif_free=*/true);
            d.text = serialize_graph(filler, relations).text;
        }
    } else {
        std::vector<std::string> serialized(m);
        for (size_t i = 0; i < m; ++i) {
            drafts[i].graph = random_graph(rng, spec, entities, relations, /*motif_free=*/false);
            serialized[i] = serialize_graph(drafts[i].graph, relations).text;
        }
        for (size_t i = 0; i < m; ++i) {
            Draft& d = drafts[i];
            if (i < positives) {
                d.text = serialized[i];
                d.label = 1;
            } else {
                size_t j = (i + 1) % m;
                while (j != i && serialized[j] == serialized[i]) j = (j + 1) % m;
                if (j == i)
                    throw config_error(
                        "all graph serializations are identical; cannot form mismatched pairs");
                d.text = serialized[j];
                d.label = 0;
            }
        }
    }

    for (Draft& d : drafts) {
        d.linked = {rng.uniform_int(d.graph.node_count())};
        mark_linked(d.graph, d.linked);
        if (rng.uniform() < spec.noise_rate) d.label ^= 1;
    }
    rng.shuffle(drafts);

    for (size_t i = 0; i < m; ++i) {
        Draft& d = drafts[i];
        out.push_back(PairInstance{record_name(TaskKind::pair, split, i), std::move(d.graph),
                                   std::move(d.linked), std::move(d.text), d.label});
    }
    return out;
}

std::vector<DataRecord> qa_split(const GeneratorSpec& spec, const std::string& split,
                                 const std::vector<std::string>& entities,
                                 const std::vector<std::string>& relations, size_t m) {
    std::vector<DataRecord> out;
    Rng rng = split_rng(spec, TaskKind::qa, split);
    for (size_t i = 0; i < m; ++i) {
        TypedGraph g = random_graph(rng, spec, entities, relations, /*motif_free=*/false);
        const size_t n = g.node_count();
        const size_t src = rng.uniform_int(n);
        const size_t rel = rng.uniform_int(relations.size());
        size_t dst = rng.uniform_int(n);
        while (dst == src) dst = rng.uniform_int(n);
        // exactly one outgoing `rel` edge from `src`, so the answer is unique
        std::erase_if(g.edges, [&](const Edge& e) { return e.src == src && e.rel == rel; });
        g.edges.push_back({src, rel, dst});

        const std::string question =
            "which entity does " + g.nodes[src].name + " " + relations[rel] + "?";

        std::unordered_set<std::string> in_graph;
        for (const Node& node : g.nodes) in_graph.insert(node.name);
        std::vector<std::string> unused;
        for (const std::string& e : entities)
            if (!in_graph.count(e)) unused.push_back(e);
        if (unused.size() < spec.n_choice - 1)
            throw config_error("entity vocabulary too small for out-of-graph distractors");
        rng.shuffle(unused);

        const size_t gold = rng.uniform_int(spec.n_choice);
        std::vector<std::string> choices(spec.n_choice);
        for (size_t k = 0; k < spec.n_choice; ++k)
            choices[k] = k == gold ? g.nodes[dst].name : unused[k < gold ? k : k - 1];

        std::vector<size_t> linked = {src};
        mark_linked(g, linked);
        out.push_back(QaInstance{record_name(TaskKind::qa, split, i), std::move(g),
                                 std::move(linked), question, std::move(choices), gold});
    }
    return out;
}

std::vector<DataRecord> retrieval_split(const GeneratorSpec& spec, const std::string& split,
                                        const std::vector<std::string>& entities,
                                        const std::vector<std::string>& relations, size_t m) {
    std::vector<DataRecord> out;
    if (m == 0) return out;
    if (m < 2) throw config_error("retrieval splits need a candidate pool of at least 2");
    Rng rng = split_rng(spec, TaskKind::retrieval, split);
    for (size_t i = 0; i < m; ++i) {
        TypedGraph query = random_graph(rng, spec, entities, relations, /*motif_free=*/false);
        TypedGraph positive = random_graph(rng, spec, entities, relations, /*motif_free=*/false);

        // per-record-unique motif: the same named edge planted in both graphs
        const std::string mx = "m" + split + std::to_string(i) + "x";
        const std::string my = "m" + split + std::to_string(i) + "y";
        const size_t motif_rel = rng.uniform_int(relations.size());
        auto plant = [&](TypedGraph& g) {
            const size_t base = g.node_count();
            g.nodes.push_back({base, mx, kNodeTypeLinked});
            g.nodes.push_back({base + 1, my, kNodeTypeRegular});
            g.edges.push_back({base, motif_rel, base + 1});
            const size_t anchor = rng.uniform_int(base);
            const size_t rel = rng.uniform_int(relations.size());
            if (rng.uniform_int(2) == 0)
                g.edges.push_back({anchor, rel, base});
            else
                g.edges.push_back({base, rel, anchor});
            return base;
        };
        const size_t qx = plant(query);
        const size_t px = plant(positive);

        const std::string query_text =
            "which description mentions " + mx + " " + relations[motif_rel] + " " + my + "?";
        std::string positive_text = serialize_graph(positive, relations).text;
        out.push_back(RetrievalInstance{record_name(TaskKind::retrieval, split, i),
                                        std::move(query),
                                        {qx},
                                        query_text,
                                        std::move(positive),
                                        {px},
                                        std::move(positive_text)});
    }
    return out;
}

template <typename SplitFn>
SplitRecords run_splits(const GeneratorSpec& spec, SplitFn&& fn) {
    validate_generator_spec(spec);
    const auto entities = entity_vocabulary(spec.entity_vocab, spec.name_hash_buckets);
    const auto relations = relation_vocabulary(spec.relation_vocab);
    SplitRecords out;
    std::vector<DataRecord>* slots[3] = {&out.train, &out.dev, &out.test};
    for (size_t w = 0; w < 3; ++w)
        *slots[w] = fn(spec, kSplitNames[w], entities, relations, split_size(spec, w));
    return out;
}

}  // namespace

TaskKind record_kind(const DataRecord& r) {
    if (std::holds_alternative<QaInstance>(r)) return TaskKind::qa;
    if (std::holds_alternative<PairInstance>(r)) return TaskKind::pair;
    return TaskKind::retrieval;
}

const std::string& record_id(const DataRecord& r) {
    return std::visit([](const auto& rec) -> const std::string& { return rec.id; }, r);
}

void validate_generator_spec(const GeneratorSpec& spec) {
    if (spec.min_nodes < 2) throw config_error("graphs need at least two nodes");
    if (spec.max_nodes < spec.min_nodes)
        throw config_error("max_nodes must be at least min_nodes");
    if (spec.max_nodes + 2 > kMaxGraphNodes)
        throw config_error("max_nodes must leave room for motif nodes under the node cap");
    if (spec.entity_vocab < spec.max_nodes)
        throw config_error("entity vocabulary must cover the largest graph");
    if (spec.relation_vocab == 0) throw config_error("need at least one relation");
    if (spec.graph_sensitive && spec.relation_vocab < 2)
        throw config_error("graph-sensitive pairs need a non-motif relation");
    if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0)
        throw config_error("noise_rate must lie in [0, 1]");
    if (spec.name_hash_buckets < spec.entity_vocab)
        throw config_error("name hash buckets must cover the entity vocabulary");
    if (spec.n_choice < 2) throw config_error("qa needs at least two choices");
    if (spec.entity_vocab < spec.max_nodes + spec.n_choice - 1)
        throw config_error("entity vocabulary too small for out-of-graph distractors");
}

std::vector<std::string> entity_vocabulary(size_t count, size_t buckets) {
    if (buckets < count)
        throw config_error("name hash buckets must cover the entity vocabulary");
    std::vector<std::string> names;
    std::unordered_set<uint64_t> used;
    for (size_t k = 0; names.size() < count; ++k) {
        if (k > 100 * count + 1000)
            throw config_error("could not find hash-distinct entity names");
        std::string cand = "e" + std::to_string(k);
        if (used.insert(fnv1a64(cand) % buckets).second) names.push_back(std::move(cand));
    }
    return names;
}

std::vector<std::string> relation_vocabulary(size_t count) {
    static const char* const kNamed[] = {"causes",   "requires", "includes", "precedes",
                                         "supports", "blocks",   "follows",  "contains"};
    constexpr size_t kNamedCount = sizeof(kNamed) / sizeof(kNamed[0]);
    std::vector<std::string> names;
    names.reserve(count);
    for (size_t k = 0; k < count; ++k)
        names.push_back(k < kNamedCount ? kNamed[k] : "rel" + std::to_string(k));
    return names;
}

TypedGraph random_graph(Rng& rng, const GeneratorSpec& spec,
                        const std::vector<std::string>& entities,
                        const std::vector<std::string>& relations, bool motif_free) {
    const size_t n = spec.min_nodes + rng.uniform_int(spec.max_nodes - spec.min_nodes + 1);
    if (entities.size() < n) throw config_error("entity vocabulary smaller than graph size");
    const size_t r_count = relations.size();
    if (motif_free && r_count < 2)
        throw config_error("motif-free graphs need a second relation");

    std::vector<size_t> pick(entities.size());
    std::iota(pick.begin(), pick.end(), 0);
    rng.shuffle(pick);

    TypedGraph g;
    g.relation_count = r_count;
    g.relation_names = relations;
    g.node_type_count = kMinNodeTypes;
    for (size_t i = 0; i < n; ++i) g.nodes.push_back({i, entities[pick[i]], kNodeTypeRegular});

    auto draw_rel = [&] {
        return motif_free ? 1 + rng.uniform_int(r_count - 1) : rng.uniform_int(r_count);
    };

    // random spanning tree keeps the graph connected
    for (size_t i = 1; i < n; ++i) {
        const size_t j = rng.uniform_int(i);
        if (rng.uniform_int(2) == 0)
            g.edges.push_back({j, draw_rel(), i});
        else
            g.edges.push_back({i, draw_rel(), j});
    }
    const size_t extras = n / 2 + rng.uniform_int(n);
    for (size_t k = 0; k < extras; ++k) {
        const size_t s = rng.uniform_int(n);
        size_t d = rng.uniform_int(n);
        while (d == s) d = rng.uniform_int(n);
        g.edges.push_back({s, draw_rel(), d});
    }
    return g;
}

SplitRecords gen_pairs(const GeneratorSpec& spec) {
    return run_splits(spec, [](const GeneratorSpec& s, const std::string& split,
                               const std::vector<std::string>& e,
                               const std::vector<std::string>& r, size_t m) {
        return pair_split(s, split, e, r, m);
    });
}

SplitRecords gen_qa(const GeneratorSpec& spec) {
    return run_splits(spec, [](const GeneratorSpec& s, const std::string& split,
                               const std::vector<std::string>& e,
                               const std::vector<std::string>& r, size_t m) {
        return qa_split(s, split, e, r, m);
    });
}

SplitRecords gen_retrieval(const GeneratorSpec& spec) {
    return run_splits(spec, [](const GeneratorSpec& s, const std::string& split,
                               const std::vector<std::string>& e,
                               const std::vector<std::string>& r, size_t m) {
        return retrieval_split(s, split, e, r, m);
    });
}

SplitRecords generate_dataset(TaskKind kind, const GeneratorSpec& spec) {
    switch (kind) {
        case TaskKind::qa: return gen_qa(spec);
        case TaskKind::pair: return gen_pairs(spec);
        case TaskKind::retrieval: return gen_retrieval(spec);
    }
    throw config_error("unknown task kind");
}

std::string record_to_line(const DataRecord& r) {
    const json j = std::visit([](const auto& rec) { return record_json(rec); }, r);
    return j.dump();
}

DataRecord record_from_line(const std::string& line, size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        fail(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) fail(line_no, "record must be a JSON object");
    if (!j.contains("kind")) fail(line_no, "record: missing field 'kind'");
    const std::string kind = get_string(j.at("kind"), "kind", line_no);
    if (kind == task_kind_name(TaskKind::qa)) return qa_from_json(j, line_no);
    if (kind == task_kind_name(TaskKind::pair)) return pair_from_json(j, line_no);
    if (kind == task_kind_name(TaskKind::retrieval)) return retrieval_from_json(j, line_no);
    fail(line_no, "record: unknown kind '" + kind + "'");
}

void save_records(const std::string& path, const std::vector<DataRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    for (const DataRecord& r : records) out << record_to_line(r) << '\n';
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

std::vector<DataRecord> load_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for reading: " + path);
    std::vector<DataRecord> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) fail(line_no, "empty line");
        out.push_back(record_from_line(line, line_no));
    }
    return out;
}

}  // namespace graft
