#pragma once

#include <string>

#include "graft/backbone.hpp"
#include "graft/gnn.hpp"
#include "graft/graph.hpp"
#include "graft/rng.hpp"
#include "graft/tensor.hpp"

namespace graft {

/// Trainable two-layer ReLU MLP that projects the pooled graph embedding
/// (width D_g) into the backbone token space (width D_t).
class Adapter {
public:
    // hidden_dim == 0 defaults to max(in_dim, out_dim)
    Adapter(size_t in_dim, size_t hidden_dim, size_t out_dim, Rng& rng);

    size_t in_dim() const { return in_; }
    size_t hidden_dim() const { return hidden_; }
    size_t out_dim() const { return out_; }

    // g~ = W2 . relu(W1 . g + b1) + b2; throws shape_error unless g is a
    // rank-1 vector of width in_dim
    Tensor adapt(const Tensor& g) const;

    ParamRefs params();

private:
    size_t in_ = 0, hidden_ = 0, out_ = 0;
    Parameter w1_, b1_, w2_, b2_;
};

/// [graph token, <s>, text tokens, </s>]. Text is truncated so the whole
/// sequence fits the backbone context; the graph token, bos, and eos always
/// survive truncation (length == 3 + min(#tokens, context - 3)).
TokenSequence build_fused_sequence(const Tensor& g_tilde, const std::string& text,
                                   const Backbone& backbone);

/// Final-layer eos state z and its L2-normalized companion z~ (both on the
/// same tape; normalizing is part of the differentiable graph).
struct JointEmbedding {
    Tensor z;             // [D_t]
    Tensor z_normalized;  // unit vector
};

struct JointModelConfig {
    BackboneConfig backbone;

    size_t gnn_hidden = 32;  // D
    size_t gnn_layers = 3;   // L
    size_t gnn_heads = 2;
    double gnn_dropout = 0.0;
    size_t node_type_count = kMinNodeTypes;
    size_t relation_count = 0;  // relations of the raw graphs; the query-link
                                // relation is added on top internally
    size_t d_init = 0;          // node init width; 0 -> backbone dim
    size_t pool_dim = 0;        // D_g; 0 -> gnn_hidden
    size_t adapter_hidden = 0;  // D_a; 0 -> max(D_g, D_t)

    NodeInitMode init_mode = NodeInitMode::backbone_name_encoding;
    uint64_t init_seed = 17;  // used by seeded_random node init

    bool receiver_state_messages = false;
    bool receiver_normalized = false;

    uint64_t seed = 42;  // trainable parameter init
};

/// Full (graph, text) -> joint embedding pipeline: query-node integration,
/// graph encoding and pooling, adapter projection, fused-sequence assembly,
/// and a pass through the frozen backbone.
class JointModel {
public:
    explicit JointModel(JointModelConfig cfg);

    const JointModelConfig& config() const { return cfg_; }
    const Backbone& backbone() const { return backbone_; }
    Backbone& backbone() { return backbone_; }
    const GraphEncoder& encoder() const { return encoder_; }
    const Adapter& adapter() const { return adapter_; }
    Adapter& adapter() { return adapter_; }

    // ctx with linked ids and the detached sentence embedding of query_text
    QueryContext make_query_context(const std::string& query_text,
                                    std::vector<size_t> linked_node_ids) const;

    // integrate -> encode -> pool -> adapt -> fuse -> backbone -> eos state.
    // An empty ctx.query_embedding is filled from ctx.query_text first.
    // Pure in eval mode; dropout_rng is required when training with dropout.
    JointEmbedding joint_embed(const TypedGraph& g, const QueryContext& ctx,
                               const std::string& text, bool training = false,
                               Rng* dropout_rng = nullptr) const;

    // graph branch ablated: plain [<s>, text, </s>] through the backbone;
    // matches Backbone::sentence_embedding values exactly
    JointEmbedding text_only_embed(const std::string& text) const;

    // the frozen initial node features exactly as joint_embed computes them
    Tensor node_init(const TypedGraph& g) const;

    ParamRefs trainable_params();  // encoder + adapter
    ParamRefs all_params();        // frozen backbone first, then trainable

private:
    JointModelConfig cfg_;
    Backbone backbone_;
    GraphEncoder encoder_;
    Adapter adapter_;
};

}  // namespace graft
