#include "graft/fusion.hpp"

#include <algorithm>
#include <utility>

#include "graft/error.hpp"

namespace graft {

namespace {

EncoderConfig encoder_config(const JointModelConfig& c) {
    EncoderConfig ec;
    ec.hidden_dim = c.gnn_hidden;
    ec.num_layers = c.gnn_layers;
    ec.num_heads = c.gnn_heads;
    ec.dropout = c.gnn_dropout;
    ec.node_type_count = std::max(c.node_type_count, kMinNodeTypes);
    ec.relation_count = c.relation_count + 1;  // query-link relation appended
    if (c.init_mode == NodeInitMode::backbone_name_encoding) {
        // name encoding mean-pools backbone token rows, so the width is fixed
        if (c.d_init != 0 && c.d_init != c.backbone.dim)
            throw config_error("d_init must equal the backbone dim under name encoding");
        ec.d_init = c.backbone.dim;
    } else {
        ec.d_init = c.d_init ? c.d_init : c.gnn_hidden;
    }
    ec.pool_dim = c.pool_dim;
    ec.query_dim = c.backbone.dim;
    ec.receiver_state_messages = c.receiver_state_messages;
    ec.receiver_normalized = c.receiver_normalized;
    return ec;
}

GraphEncoder make_encoder(const JointModelConfig& c) {
    Rng rng(c.seed);
    return GraphEncoder(encoder_config(c), rng);
}

Adapter make_adapter(const JointModelConfig& c) {
    // independent stream so adapter shapes never shift encoder draws
    Rng rng(c.seed ^ 0x9e3779b97f4a7c15ull);
    EncoderConfig ec = encoder_config(c);
    return Adapter(ec.pool_dim_or_default(), c.adapter_hidden, c.backbone.dim, rng);
}

}  // namespace

Adapter::Adapter(size_t in_dim, size_t hidden_dim, size_t out_dim, Rng& rng)
    : in_(in_dim), hidden_(hidden_dim ? hidden_dim : std::max(in_dim, out_dim)), out_(out_dim),
      w1_(Parameter::xavier("adapter.w1", in_, hidden_, rng)),
      b1_(Parameter::zeros("adapter.b1", {hidden_})),
      w2_(Parameter::xavier("adapter.w2", hidden_, out_, rng)),
      b2_(Parameter::zeros("adapter.b2", {out_})) {
    if (in_ == 0 || out_ == 0) throw config_error("adapter dims must be positive");
}

Tensor Adapter::adapt(const Tensor& g) const {
    if (g.rank() != 1 || g.numel() != in_)
        throw shape_error("adapter expects a vector of width " + std::to_string(in_));
    Tensor h = relu(add(matmul(g, w1_.tensor()), b1_.tensor()));
    return add(matmul(h, w2_.tensor()), b2_.tensor());
}

ParamRefs Adapter::params() { return {&w1_, &b1_, &w2_, &b2_}; }

TokenSequence build_fused_sequence(const Tensor& g_tilde, const std::string& text,
                                   const Backbone& backbone) {
    if (g_tilde.rank() != 1 || g_tilde.numel() != backbone.dim())
        throw shape_error("graph token must be a vector of the backbone dim");

    std::vector<size_t> tokens = backbone.tokenize(text);
    const size_t cap = backbone.context() - 3;  // graph token + bos + eos always fit
    if (tokens.size() > cap) tokens.resize(cap);

    std::vector<size_t> ids;
    ids.reserve(tokens.size() + 2);
    ids.push_back(kBosToken);
    ids.insert(ids.end(), tokens.begin(), tokens.end());
    ids.push_back(kEosToken);

    TokenSequence seq;
    seq.rows = concat({g_tilde, backbone.token_rows(ids)}, 0);
    seq.roles.reserve(tokens.size() + 3);
    seq.roles.push_back(TokenRole::graph_token);
    seq.roles.push_back(TokenRole::bos);
    seq.roles.insert(seq.roles.end(), tokens.size(), TokenRole::text);
    seq.roles.push_back(TokenRole::eos);
    return seq;
}

JointModel::JointModel(JointModelConfig cfg)
    : cfg_(std::move(cfg)),
      backbone_(cfg_.backbone),
      encoder_(make_encoder(cfg_)),
      adapter_(make_adapter(cfg_)) {}

QueryContext JointModel::make_query_context(const std::string& query_text,
                                            std::vector<size_t> linked_node_ids) const {
    QueryContext ctx;
    ctx.query_text = query_text;
    ctx.linked_node_ids = std::move(linked_node_ids);
    ctx.query_embedding = backbone_.sentence_embedding(query_text);
    return ctx;
}

Tensor JointModel::node_init(const TypedGraph& g) const {
    return init_node_embeddings(g, cfg_.init_mode, cfg_.init_seed, &backbone_,
                                encoder_.config().d_init_or_default());
}

JointEmbedding JointModel::joint_embed(const TypedGraph& g, const QueryContext& ctx,
                                       const std::string& text, bool training,
                                       Rng* dropout_rng) const {
    QueryContext filled = ctx;
    if (!filled.query_embedding.defined() || filled.query_embedding.numel() == 0)
        filled.query_embedding = backbone_.sentence_embedding(filled.query_text);

    Tensor init = node_init(g);
    IntegratedGraph ig = integrate_query_node(g, init, filled);
    std::vector<Tensor> states =
        encoder_.encode_graph(ig.graph, ig.init_embeddings, training, dropout_rng);
    Tensor pooled = encoder_.pool_graph(states, filled.query_embedding, ig.query_node);
    Tensor g_tilde = adapter_.adapt(pooled);

    TokenSequence seq = build_fused_sequence(g_tilde, text, backbone_);
    Tensor final_states = backbone_.encode_sequence(seq);
    Tensor z = backbone_.extract_joint(final_states, seq);
    return {z, l2_normalize(z)};
}

JointEmbedding JointModel::text_only_embed(const std::string& text) const {
    TokenSequence seq = backbone_.text_sequence(text);
    Tensor final_states = backbone_.encode_sequence(seq);
    Tensor z = backbone_.extract_joint(final_states, seq);
    return {z, l2_normalize(z)};
}

ParamRefs JointModel::trainable_params() {
    ParamRefs out = encoder_.params();
    ParamRefs a = adapter_.params();
    out.insert(out.end(), a.begin(), a.end());
    return out;
}

ParamRefs JointModel::all_params() {
    ParamRefs out = backbone_.params();
    ParamRefs t = trainable_params();
    out.insert(out.end(), t.begin(), t.end());
    return out;
}

}  // namespace graft
