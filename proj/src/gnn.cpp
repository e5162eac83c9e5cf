#include "graft/gnn.hpp"

#include <cmath>

namespace graft {

void EncoderConfig::validate() const {
    if (hidden_dim == 0) throw config_error("encoder hidden_dim must be positive");
    if (num_layers < 1) throw config_error("encoder needs at least one layer");
    if (num_heads == 0 || hidden_dim % num_heads != 0)
        throw config_error("heads must divide encoder hidden_dim");
    if (node_type_count < kMinNodeTypes)
        throw config_error("encoder node_type_count must cover regular/linked/query");
    if (relation_count == 0) throw config_error("encoder relation_count must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw config_error("dropout must be in [0,1)");
}

ParamRefs GatLayerParams::params() {
    return {&u,    &e,    &fr_w1, &fr_b1, &fr_w2, &fr_b2, &fm_w, &fm_b,
            &fq_w, &fq_b, &fk_w,  &fn_w1, &fn_b1, &fn_w2, &fn_b2};
}

GraphEncoder::GraphEncoder(EncoderConfig cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const size_t d = cfg_.hidden_dim;
    const size_t du = cfg_.type_dim_or_default();
    const size_t de = cfg_.rel_dim_or_default();
    const size_t dr = cfg_.r_dim_or_default();
    const size_t din = cfg_.d_init_or_default();
    const size_t dg = cfg_.pool_dim_or_default();
    if (cfg_.query_dim == 0) throw config_error("encoder query_dim must be set");

    proj_ = Parameter::xavier("gnn.proj", din, d, rng);

    layers_.reserve(cfg_.num_layers);
    for (size_t l = 0; l < cfg_.num_layers; ++l) {
        const std::string p = "gnn.l" + std::to_string(l) + ".";
        GatLayerParams lay{
            Parameter::normal(p + "u", {cfg_.node_type_count, du}, rng, 1.0),
            Parameter::normal(p + "e", {cfg_.aug_relation_count(), de}, rng, 1.0),
            Parameter::xavier(p + "fr_w1", de + 2 * du, dr, rng),
            Parameter::zeros(p + "fr_b1", {dr}),
            Parameter::xavier(p + "fr_w2", dr, dr, rng),
            Parameter::zeros(p + "fr_b2", {dr}),
            Parameter::xavier(p + "fm_w", d + du + dr, d, rng),
            Parameter::zeros(p + "fm_b", {d}),
            Parameter::xavier(p + "fq_w", d + du, d, rng),
            Parameter::zeros(p + "fq_b", {d}),
            Parameter::xavier(p + "fk_w", d + du + dr, d, rng),
            Parameter::xavier(p + "fn_w1", d, d, rng),
            Parameter::zeros(p + "fn_b1", {d}),
            Parameter::xavier(p + "fn_w2", d, d, rng),
            Parameter::zeros(p + "fn_b2", {d}),
        };
        layers_.push_back(std::move(lay));
    }

    pool_w1_ = Parameter::xavier("gnn.pool_w1", 2 * d + cfg_.query_dim, d, rng);
    pool_b1_ = Parameter::zeros("gnn.pool_b1", {d});
    pool_w2_ = Parameter::xavier("gnn.pool_w2", d, dg, rng);
    pool_b2_ = Parameter::zeros("gnn.pool_b2", {dg});
}

AugmentedEdges GraphEncoder::augment_edges(const TypedGraph& g) const {
    if (g.relation_count != cfg_.relation_count)
        throw shape_error("graph relation count does not match encoder config");
    if (g.node_type_count > cfg_.node_type_count)
        throw shape_error("graph node types exceed encoder config");

    AugmentedEdges aug;
    aug.node_count = g.node_count();
    const size_t total = 2 * g.edges.size() + g.node_count();
    aug.sender.reserve(total);
    aug.receiver.reserve(total);
    aug.rel.reserve(total);
    auto push = [&](size_t s, size_t r, size_t v) {
        aug.sender.push_back(s);
        aug.rel.push_back(r);
        aug.receiver.push_back(v);
    };
    for (const Edge& e : g.edges) push(e.src, e.rel, e.dst);
    for (const Edge& e : g.edges) push(e.dst, cfg_.inverse_relation(e.rel), e.src);
    for (size_t v = 0; v < g.node_count(); ++v) push(v, cfg_.self_relation(), v);

    aug.sender_type.reserve(total);
    aug.receiver_type.reserve(total);
    for (size_t i = 0; i < aug.size(); ++i) {
        aug.sender_type.push_back(g.nodes[aug.sender[i]].type);
        aug.receiver_type.push_back(g.nodes[aug.receiver[i]].type);
    }
    return aug;
}

Tensor GraphEncoder::input_projection(const Tensor& init) const {
    if (init.cols() != cfg_.d_init_or_default())
        throw shape_error("init embedding width does not match encoder d_init");
    return matmul(init, proj_.tensor());
}

namespace {

Tensor mlp2(const Tensor& x, const Parameter& w1, const Parameter& b1, const Parameter& w2,
            const Parameter& b2) {
    return add(matmul(relu(add(matmul(x, w1.tensor()), b1.tensor())), w2.tensor()), b2.tensor());
}

}  // namespace

Tensor GraphEncoder::relation_features(size_t layer, const AugmentedEdges& aug) const {
    const GatLayerParams& lay = layers_.at(layer);
    Tensor e_rows = gather_rows(lay.e.tensor(), aug.rel);
    Tensor us = gather_rows(lay.u.tensor(), aug.sender_type);
    Tensor uv = gather_rows(lay.u.tensor(), aug.receiver_type);
    return mlp2(concat_cols({e_rows, us, uv}), lay.fr_w1, lay.fr_b1, lay.fr_w2, lay.fr_b2);
}

Tensor GraphEncoder::compute_messages(size_t layer, const Tensor& h, const AugmentedEdges& aug,
                                      const Tensor& r) const {
    const GatLayerParams& lay = layers_.at(layer);
    const auto& state_ids = cfg_.receiver_state_messages ? aug.receiver : aug.sender;
    const auto& type_ids = cfg_.receiver_state_messages ? aug.receiver_type : aug.sender_type;
    Tensor hs = gather_rows(h, state_ids);
    Tensor ut = gather_rows(lay.u.tensor(), type_ids);
    return add(matmul(concat_cols({hs, ut, r}), lay.fm_w.tensor()), lay.fm_b.tensor());
}

Tensor GraphEncoder::attention_weights(size_t layer, const Tensor& h, const AugmentedEdges& aug,
                                       const Tensor& r, MessagePassingTrace* trace) const {
    const GatLayerParams& lay = layers_.at(layer);
    const size_t heads = cfg_.num_heads;
    const size_t dh = cfg_.hidden_dim / heads;

    Tensor us = gather_rows(lay.u.tensor(), aug.sender_type);
    Tensor uv = gather_rows(lay.u.tensor(), aug.receiver_type);
    Tensor hs = gather_rows(h, aug.sender);
    Tensor hv = gather_rows(h, aug.receiver);

    Tensor q = add(matmul(concat_cols({hs, us}), lay.fq_w.tensor()), lay.fq_b.tensor());
    Tensor k = matmul(concat_cols({hv, uv, r}), lay.fk_w.tensor());

    // per-head dot products: gamma[e, head] = q_h . k_h / sqrt(D/H)
    std::vector<Tensor> head_logits;
    head_logits.reserve(heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (size_t hd = 0; hd < heads; ++hd) {
        Tensor qh = slice_cols(q, hd * dh, dh);
        Tensor kh = slice_cols(k, hd * dh, dh);
        Tensor prod = sum_axis(mul(qh, kh), 1);  // [E]
        head_logits.push_back(reshape(scale(prod, inv_sqrt), {aug.size(), 1}));
    }
    Tensor gamma = heads == 1 ? head_logits[0] : concat_cols(head_logits);

    const auto& groups = cfg_.receiver_normalized ? aug.receiver : aug.sender;
    Tensor alpha = segment_softmax(gamma, groups, aug.node_count);

    if (trace) {
        trace->q = q;
        trace->k = k;
        trace->gamma = gamma;
        trace->alpha = alpha;
    }
    return alpha;
}

Tensor GraphEncoder::gat_layer_forward(size_t layer, const Tensor& h, const AugmentedEdges& aug,
                                       bool training, Rng* dropout_rng,
                                       MessagePassingTrace* trace) const {
    const GatLayerParams& lay = layers_.at(layer);
    const size_t heads = cfg_.num_heads;
    const size_t dh = cfg_.hidden_dim / heads;

    Tensor r = relation_features(layer, aug);
    Tensor m = compute_messages(layer, h, aug, r);
    Tensor alpha = attention_weights(layer, h, aug, r, trace);
    if (trace) {
        trace->r = r;
        trace->m = m;
    }

    // weight each head's slice of the message by that head's alpha
    std::vector<Tensor> weighted;
    weighted.reserve(heads);
    for (size_t hd = 0; hd < heads; ++hd) {
        Tensor mh = slice_cols(m, hd * dh, dh);
        Tensor ah = slice_cols(alpha, hd, 1);  // [E,1] column broadcast
        weighted.push_back(mul(mh, ah));
    }
    Tensor wm = heads == 1 ? weighted[0] : concat_cols(weighted);
    Tensor agg = segment_sum(wm, aug.receiver, aug.node_count);

    if (training && cfg_.dropout > 0.0) {
        if (dropout_rng == nullptr) throw contract_error("training dropout needs an rng");
        const double keep = 1.0 - cfg_.dropout;
        std::vector<double> mask(agg.numel());
        for (double& v : mask) v = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        agg = mul(agg, Tensor::constant(agg.shape(), std::move(mask)));
    }

    return add(mlp2(agg, lay.fn_w1, lay.fn_b1, lay.fn_w2, lay.fn_b2), h);
}

std::vector<Tensor> GraphEncoder::encode_graph(const TypedGraph& g_prime, const Tensor& init,
                                               bool training, Rng* dropout_rng) const {
    if (!g_prime.has_query_node()) throw contract_error("encode_graph expects an integrated graph");
    AugmentedEdges aug = augment_edges(g_prime);
    std::vector<Tensor> states;
    states.reserve(cfg_.num_layers + 1);
    states.push_back(input_projection(init));
    for (size_t l = 0; l < cfg_.num_layers; ++l)
        states.push_back(gat_layer_forward(l, states.back(), aug, training, dropout_rng));
    return states;
}

Tensor GraphEncoder::pool_graph(const std::vector<Tensor>& states, const Tensor& query_embedding,
                                size_t query_node) const {
    if (states.empty()) throw contract_error("pool_graph needs encoder states");
    const Tensor& last = states.back();
    if (query_node >= last.rows()) throw shape_error("query node id out of range");
    if (query_embedding.numel() != cfg_.query_dim)
        throw shape_error("query embedding width does not match encoder config");

    Tensor hq = row(last, query_node);
    Tensor pooled = mean_axis(last, 0);
    Tensor cat = concat_cols({hq, pooled, query_embedding});
    Tensor hidden = relu(add(matmul(cat, pool_w1_.tensor()), pool_b1_.tensor()));
    return add(matmul(hidden, pool_w2_.tensor()), pool_b2_.tensor());
}

ParamRefs GraphEncoder::params() {
    ParamRefs out{&proj_};
    for (GatLayerParams& l : layers_) {
        ParamRefs lp = l.params();
        out.insert(out.end(), lp.begin(), lp.end());
    }
    out.push_back(&pool_w1_);
    out.push_back(&pool_b1_);
    out.push_back(&pool_w2_);
    out.push_back(&pool_b2_);
    return out;
}

}  // namespace graft
