#include "graft/graph.hpp"

#include <algorithm>
#include <sstream>

namespace graft {

bool TypedGraph::has_query_node() const {
    for (const Node& n : nodes)
        if (n.type == kNodeTypeQuery) return true;
    return false;
}

std::vector<std::string> validate_graph(const TypedGraph& g) {
    std::vector<std::string> out;
    auto note = [&](const std::string& s) { out.push_back(s); };

    for (size_t i = 0; i < g.nodes.size(); ++i) {
        if (g.nodes[i].id != i) {
            std::ostringstream os;
            os << "node id " << g.nodes[i].id << " at position " << i << " breaks dense 0..n-1 ids";
            note(os.str());
        }
        if (g.nodes[i].type >= g.node_type_count) {
            std::ostringstream os;
            os << "node " << i << " type " << g.nodes[i].type << " out of range";
            note(os.str());
        }
    }
    const size_t n = g.nodes.size();
    for (size_t e = 0; e < g.edges.size(); ++e) {
        const Edge& ed = g.edges[e];
        std::ostringstream os;
        if (ed.src >= n)
            os << "dangling src " << ed.src << " in edge " << e;
        else if (ed.dst >= n)
            os << "dangling dst " << ed.dst << " in edge " << e;
        else if (ed.rel >= g.relation_count)
            os << "relation " << ed.rel << " out of range in edge " << e;
        else if (ed.src == ed.dst)
            os << "self-loop on node " << ed.src << " in edge " << e;
        else
            continue;
        note(os.str());
    }
    if (!g.relation_names.empty() && g.relation_names.size() != g.relation_count) {
        std::ostringstream os;
        os << "relation_names lists " << g.relation_names.size() << " names for "
           << g.relation_count << " relations";
        note(os.str());
    }
    return out;
}

Tensor init_node_embeddings(const TypedGraph& g, NodeInitMode mode, uint64_t seed,
                            const Backbone* backbone, size_t d_init) {
    const size_t n = g.node_count();
    switch (mode) {
        case NodeInitMode::backbone_name_encoding: {
            if (backbone == nullptr)
                throw config_error("backbone_name_encoding needs a backbone");
            const size_t d = backbone->dim();
            std::vector<double> rows(n * d, 0.0);
            NoGradGuard ng;
            const auto& table = backbone->token_table().values();
            for (size_t i = 0; i < n; ++i) {
                std::vector<size_t> ids = backbone->tokenize(g.nodes[i].name);
                if (ids.empty()) ids.push_back(kUnkToken);
                for (size_t id : ids)
                    for (size_t j = 0; j < d; ++j) rows[i * d + j] += table[id * d + j];
                for (size_t j = 0; j < d; ++j) rows[i * d + j] /= static_cast<double>(ids.size());
            }
            return Tensor::constant({n, d}, std::move(rows));
        }
        case NodeInitMode::seeded_random: {
            if (d_init == 0) throw config_error("seeded_random needs d_init > 0");
            std::vector<double> rows(n * d_init);
            for (size_t i = 0; i < n; ++i) {
                Rng rng(fnv1a64(g.nodes[i].name) ^ seed);
                for (size_t j = 0; j < d_init; ++j) rows[i * d_init + j] = rng.normal();
            }
            return Tensor::constant({n, d_init}, std::move(rows));
        }
    }
    throw config_error("unknown node init mode");
}

IntegratedGraph integrate_query_node(const TypedGraph& g, const Tensor& init,
                                     const QueryContext& ctx) {
    if (g.has_query_node()) throw contract_error("query node already present");
    if (!init.defined() || init.rank() != 2 || init.rows() != g.node_count())
        throw shape_error("init embeddings do not match graph");
    if (!ctx.query_embedding.defined() || ctx.query_embedding.rank() != 1)
        throw shape_error("query embedding must be a vector");

    const size_t n = g.node_count();
    for (size_t id : ctx.linked_node_ids)
        if (id >= n) throw contract_error("linked node id out of range");

    IntegratedGraph out;
    out.graph = g;
    out.query_node = n;
    out.query_link_relation = g.relation_count;
    out.graph.relation_count = g.relation_count + 1;
    if (!out.graph.relation_names.empty()) out.graph.relation_names.push_back("query");
    out.graph.node_type_count = std::max(g.node_type_count, kMinNodeTypes);
    out.graph.nodes.push_back({n, "query", kNodeTypeQuery});
    for (size_t id : ctx.linked_node_ids)
        out.graph.edges.push_back({n, out.query_link_relation, id});

    // query embedding padded/truncated onto the init row width
    const size_t d_init = init.cols();
    std::vector<double> qrow(d_init, 0.0);
    const auto& qe = ctx.query_embedding.values();
    for (size_t j = 0; j < std::min(d_init, qe.size()); ++j) qrow[j] = qe[j];
    out.init_embeddings = concat_rows({init, Tensor::constant({1, d_init}, std::move(qrow))});

    if (ctx.linked_node_ids.empty())
        out.diagnostics.push_back("query node is isolated: empty linked set");
    return out;
}

}  // namespace graft
