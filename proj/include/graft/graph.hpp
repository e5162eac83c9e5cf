#pragma once

#include <string>
#include <vector>

#include "graft/backbone.hpp"
#include "graft/tensor.hpp"

namespace graft {

// Node type convention used across generators and the encoder; graphs may
// define more types, but these three ids are fixed.
inline constexpr size_t kNodeTypeRegular = 0;
inline constexpr size_t kNodeTypeLinked = 1;
inline constexpr size_t kNodeTypeQuery = 2;
inline constexpr size_t kMinNodeTypes = 3;

struct Node {
    size_t id = 0;
    std::string name;
    size_t type = kNodeTypeRegular;

    bool operator==(const Node&) const = default;
};

struct Edge {
    size_t src = 0;
    size_t rel = 0;
    size_t dst = 0;

    bool operator==(const Edge&) const = default;
};

/// Directed typed multigraph. Parallel edges are allowed; self-loops are
/// invalid at ingestion (the encoder adds its own self terms).
struct TypedGraph {
    std::vector<Node> nodes;
    std::vector<Edge> edges;
    size_t relation_count = 0;
    size_t node_type_count = kMinNodeTypes;
    // optional printable names, one per relation id, used by serialization;
    // when present the length must equal relation_count
    std::vector<std::string> relation_names;

    size_t node_count() const { return nodes.size(); }
    bool has_query_node() const;

    bool operator==(const TypedGraph&) const = default;
};

/// All invariant violations, empty when the graph is well formed:
/// dense node ids, endpoints exist, relation/type ids in range, no self-loops.
std::vector<std::string> validate_graph(const TypedGraph& g);

enum class NodeInitMode { backbone_name_encoding, seeded_random };

/// Frozen initial node embeddings, one row per node, deterministic in
/// (graph, mode, seed). backbone_name_encoding mean-pools the backbone's
/// token-table rows for each node name (D_init = backbone dim, seed unused);
/// seeded_random draws unit-variance rows keyed by (name, seed).
Tensor init_node_embeddings(const TypedGraph& g, NodeInitMode mode, uint64_t seed,
                            const Backbone* backbone, size_t d_init);

struct QueryContext {
    std::string query_text;
    std::vector<size_t> linked_node_ids;  // must exist in the graph
    Tensor query_embedding;               // detached, backbone dim
};

struct IntegratedGraph {
    TypedGraph graph;        // original + query node v_q (id n) + query-link edges
    Tensor init_embeddings;  // (n+1) x D_init
    size_t query_node = 0;
    size_t query_link_relation = 0;  // reserved id == input relation_count
    std::vector<std::string> diagnostics;
};

/// Appends the query node, connects it to every linked node with the
/// reserved query-link relation, and extends the init matrix with the
/// query embedding (padded/truncated to D_init). Throws contract_error if
/// a query node is already present or a linked id is out of range.
IntegratedGraph integrate_query_node(const TypedGraph& g, const Tensor& init,
                                     const QueryContext& ctx);

}  // namespace graft
