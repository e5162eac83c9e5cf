#pragma once

#include <optional>
#include <vector>

#include "graft/graph.hpp"
#include "graft/tensor.hpp"

namespace graft {

struct EncoderConfig {
    size_t hidden_dim = 32;  // D
    size_t num_layers = 3;   // L
    size_t num_heads = 2;
    double dropout = 0.0;
    size_t node_type_count = kMinNodeTypes;
    size_t relation_count = 0;  // relations of the integrated graph (incl. query link)
    size_t d_init = 0;          // input embedding width (0 -> hidden_dim)
    size_t type_dim = 0;        // node-type embedding width  (0 -> hidden_dim)
    size_t rel_dim = 0;         // relation embedding width   (0 -> hidden_dim)
    size_t r_dim = 0;           // relation feature width     (0 -> hidden_dim)
    size_t pool_dim = 0;        // pooled graph embedding D_g (0 -> hidden_dim)
    size_t query_dim = 0;       // query embedding width (backbone dim)

    // Eq-literal toggles: messages built from the receiver's state instead
    // of the sender's, and attention renormalized per receiver instead of
    // the per-sender normalization written in the attention equation.
    bool receiver_state_messages = false;
    bool receiver_normalized = false;

    void validate() const;  // positive dims, layers >= 1, heads divide D
    size_t d_init_or_default() const { return d_init ? d_init : hidden_dim; }
    size_t type_dim_or_default() const { return type_dim ? type_dim : hidden_dim; }
    size_t rel_dim_or_default() const { return rel_dim ? rel_dim : hidden_dim; }
    size_t r_dim_or_default() const { return r_dim ? r_dim : hidden_dim; }
    size_t pool_dim_or_default() const { return pool_dim ? pool_dim : hidden_dim; }

    // augmented relation ids: r, inverse(r) = R + r, self = 2R
    size_t aug_relation_count() const { return 2 * relation_count + 1; }
    size_t inverse_relation(size_t r) const { return relation_count + r; }
    size_t self_relation() const { return 2 * relation_count; }
};

/// Message edges for one graph: every original edge, its inverse (own
/// relation id), and one self-loop per node (reserved self relation).
/// Messages flow sender -> receiver.
struct AugmentedEdges {
    std::vector<size_t> sender, receiver, rel;
    std::vector<size_t> sender_type, receiver_type;
    size_t node_count = 0;
    size_t size() const { return sender.size(); }
};

struct GatLayerParams {
    Parameter u;  // node-type embeddings [T, D_u]
    Parameter e;  // relation embeddings  [2R+1, D_e]
    Parameter fr_w1, fr_b1, fr_w2, fr_b2;  // relation feature MLP -> D_r
    Parameter fm_w, fm_b;                  // message projection   -> D
    Parameter fq_w, fq_b;                  // query projection     -> D
    // key projection -> D; no bias: a key bias shifts every logit in a
    // sender's softmax group equally, so it would be a dead parameter
    Parameter fk_w;
    Parameter fn_w1, fn_b1, fn_w2, fn_b2;  // node update MLP D -> D -> D
    ParamRefs params();
};

/// Per-edge intermediates of one layer, for inspection and invariants.
struct MessagePassingTrace {
    Tensor r;      // [E, D_r]
    Tensor m;      // [E, D]
    Tensor q;      // [E, D] sender queries gathered per edge
    Tensor k;      // [E, D]
    Tensor gamma;  // [E, H] scaled logits
    Tensor alpha;  // [E, H]; per-sender groups sum to 1
};

/// L layers of typed message passing with residual updates, then pooling
/// of (query node state, mean node state, query text embedding) to the
/// graph embedding g.
class GraphEncoder {
public:
    GraphEncoder(EncoderConfig cfg, Rng& rng);

    const EncoderConfig& config() const { return cfg_; }

    AugmentedEdges augment_edges(const TypedGraph& g) const;

    Tensor input_projection(const Tensor& init) const;  // [n, D_init] -> [n, D]

    // r_sv = f_r([e_sv; u_type(s); u_type(v)]) per edge
    Tensor relation_features(size_t layer, const AugmentedEdges& aug) const;

    // default: m_sv = f_m([h_s; u_type(s); r_sv]); receiver_state_messages
    // swaps in (h_v, u_type(v))
    Tensor compute_messages(size_t layer, const Tensor& h, const AugmentedEdges& aug,
                            const Tensor& r) const;

    // alpha[e,head] from q_s . k_v / sqrt(D/H), softmax over each sender's
    // outgoing group (self-loop included); per-receiver under the flag
    Tensor attention_weights(size_t layer, const Tensor& h, const AugmentedEdges& aug,
                             const Tensor& r, MessagePassingTrace* trace = nullptr) const;

    // h' = f_n(dropout(sum_in alpha * m)) + h
    Tensor gat_layer_forward(size_t layer, const Tensor& h, const AugmentedEdges& aug,
                             bool training = false, Rng* dropout_rng = nullptr,
                             MessagePassingTrace* trace = nullptr) const;

    // states[0..L]; states[0] = input projection of the init embeddings
    std::vector<Tensor> encode_graph(const TypedGraph& g_prime, const Tensor& init,
                                     bool training = false, Rng* dropout_rng = nullptr) const;

    // g = pool MLP([h_q^(L); mean_v h_v^(L); query_embedding]) -> D_g
    Tensor pool_graph(const std::vector<Tensor>& states, const Tensor& query_embedding,
                      size_t query_node) const;

    ParamRefs params();

private:
    EncoderConfig cfg_;
    Parameter proj_;  // [D_init, D]
    std::vector<GatLayerParams> layers_;
    Parameter pool_w1_, pool_b1_, pool_w2_, pool_b2_;
};

}  // namespace graft
