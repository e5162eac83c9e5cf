#include "doctest.h"

#include "test_util.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "graft/fusion.hpp"
#include "graft/gradcheck.hpp"

using namespace graft;
using graft::testutil::max_abs_diff;
using graft::testutil::PrecisionScope;
using graft::testutil::random_vec;

namespace {

std::vector<double> identity_values(size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return v;
}

// six named nodes, two base relations, one linked node
TypedGraph six_node_graph() {
    TypedGraph g;
    g.relation_count = 2;
    const char* names[] = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};
    for (size_t i = 0; i < 6; ++i)
        g.nodes.push_back({i, names[i], i == 1 ? kNodeTypeLinked : kNodeTypeRegular});
    g.edges = {{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 4}, {4, 0, 5}, {5, 1, 0}, {1, 0, 4}};
    return g;
}

JointModelConfig micro_config(uint64_t seed = 3) {
    JointModelConfig cfg;
    cfg.backbone.vocab_size = 64;
    cfg.backbone.dim = 16;
    cfg.backbone.layers = 1;
    cfg.backbone.heads = 2;
    cfg.backbone.context = 24;
    cfg.backbone.seed = 77;
    cfg.gnn_hidden = 8;
    cfg.gnn_layers = 2;
    cfg.gnn_heads = 2;
    cfg.relation_count = 2;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("fusion");

TEST_CASE("zeroed adapter maps every input to zero") {
    PrecisionScope ps(Precision::f64);
    Rng rng(4);
    Adapter a(5, 7, 3, rng);
    for (Parameter* p : a.params()) p->assign(std::vector<double>(p->numel(), 0.0));
    Tensor out = a.adapt(Tensor::constant({5}, random_vec(rng, 5)));
    REQUIRE(out.numel() == 3);
    for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("identity-stacked adapter passes nonnegative vectors through") {
    PrecisionScope ps(Precision::f64);
    Rng rng(4);
    Adapter a(4, 4, 4, rng);
    ParamRefs ps4 = a.params();
    ps4[0]->assign(identity_values(4));                 // w1
    ps4[1]->assign(std::vector<double>(4, 0.0));        // b1
    ps4[2]->assign(identity_values(4));                 // w2
    ps4[3]->assign(std::vector<double>(4, 0.0));        // b2
    const std::vector<double> g = {0.5, 1.25, 0.0, 2.0};  // relu-transparent
    Tensor out = a.adapt(Tensor::constant({4}, g));
    CHECK(max_abs_diff(out.values(), g) == 0.0);
}

TEST_CASE("adapter hidden width defaults to the larger endpoint") {
    Rng rng(4);
    Adapter narrow(3, 0, 9, rng);
    CHECK(narrow.hidden_dim() == 9);
    Adapter wide(10, 0, 2, rng);
    CHECK(wide.hidden_dim() == 10);
}

TEST_CASE("adapter rejects inputs of the wrong width") {
    Rng rng(4);
    Adapter a(5, 0, 3, rng);
    CHECK_THROWS_AS(a.adapt(Tensor::constant({4}, std::vector<double>(4, 1.0))), shape_error);
    CHECK_THROWS_AS(a.adapt(Tensor::constant({2, 5}, std::vector<double>(10, 1.0))), shape_error);
}

TEST_CASE("adapter gradient check on all four blocks") {
    PrecisionScope ps(Precision::f64);
    for (uint64_t seed = 11; seed < 16; ++seed) {
        Rng rng(seed);
        Adapter a(6, 5, 4, rng);
        Tensor g = Tensor::constant({6}, random_vec(rng, 6));
        Tensor probe = Tensor::constant({4}, random_vec(rng, 4));
        auto loss = [&] { return dot(a.adapt(g), probe); };
        GradReport rep = grad_check(loss, a.params());
        if (rep.near_kink && seed != 15) continue;  // relu kink: try another draw
        INFO(rep.summary());
        CHECK(rep.pass());
        CHECK(rep.max_rel_err < 1e-4);
        break;
    }
}

TEST_CASE("fused sequence carries graph token, bos, text, eos in order") {
    Backbone bb(BackboneConfig{});
    Rng rng(9);
    Tensor gt = Tensor::constant({bb.dim()}, random_vec(rng, bb.dim()));
    TokenSequence seq = build_fused_sequence(gt, "alpha beta gamma", bb);

    REQUIRE(seq.length() == 6);
    CHECK(seq.roles[0] == TokenRole::graph_token);
    CHECK(seq.roles[1] == TokenRole::bos);
    CHECK(seq.roles[2] == TokenRole::text);
    CHECK(seq.roles[4] == TokenRole::text);
    CHECK(seq.roles[5] == TokenRole::eos);
    CHECK(seq.eos_pos() == 5);
    CHECK(seq.rows.rows() == 6);
    CHECK(seq.rows.cols() == bb.dim());

    // first row is the graph token itself (f32-quantized like any op output)
    std::vector<double> first(bb.dim());
    for (size_t j = 0; j < bb.dim(); ++j) first[j] = seq.rows.values()[j];
    CHECK(max_abs_diff(first, gt.values()) == 0.0);
}

TEST_CASE("empty text fuses to graph token plus sentence markers") {
    Backbone bb(BackboneConfig{});
    Tensor gt = Tensor::zeros({bb.dim()});
    TokenSequence seq = build_fused_sequence(gt, "", bb);
    REQUIRE(seq.length() == 3);
    CHECK(seq.roles[0] == TokenRole::graph_token);
    CHECK(seq.roles[1] == TokenRole::bos);
    CHECK(seq.roles[2] == TokenRole::eos);
}

TEST_CASE("truncation always preserves graph token, bos, and eos") {
    BackboneConfig cfg;
    cfg.context = 8;
    Backbone bb(cfg);
    Tensor gt = Tensor::zeros({bb.dim()});
    const std::string text = "one two three four five six seven eight nine ten";
    const size_t word_count = 10;
    TokenSequence seq = build_fused_sequence(gt, text, bb);

    CHECK(seq.length() == 3 + std::min(word_count, cfg.context - 3));
    CHECK(seq.length() == cfg.context);
    CHECK(seq.roles.front() == TokenRole::graph_token);
    CHECK(seq.roles[1] == TokenRole::bos);
    CHECK(seq.roles.back() == TokenRole::eos);
    CHECK_NOTHROW(bb.encode_sequence(seq));
}

TEST_CASE("graph token must match the backbone width") {
    Backbone bb(BackboneConfig{});
    Tensor bad = Tensor::zeros({bb.dim() + 1});
    CHECK_THROWS_AS(build_fused_sequence(bad, "x", bb), shape_error);
}

TEST_CASE("joint embedding is deterministic in eval mode") {
    JointModel model(micro_config());
    TypedGraph g = six_node_graph();
    QueryContext ctx = model.make_query_context("which entity follows alpha", {1});

    JointEmbedding a = model.joint_embed(g, ctx, "beta follows alpha");
    JointEmbedding b = model.joint_embed(g, ctx, "beta follows alpha");
    CHECK(a.z.values() == b.z.values());
    CHECK(a.z_normalized.values() == b.z_normalized.values());
}

TEST_CASE("joint embedding fills an empty query embedding from the query text") {
    JointModel model(micro_config());
    TypedGraph g = six_node_graph();
    QueryContext bare;
    bare.query_text = "which entity follows alpha";
    bare.linked_node_ids = {1};

    JointEmbedding a = model.joint_embed(g, bare, "beta");
    JointEmbedding b =
        model.joint_embed(g, model.make_query_context(bare.query_text, {1}), "beta");
    CHECK(a.z.values() == b.z.values());
}

TEST_CASE("normalized joint embedding has unit length") {
    PrecisionScope ps(Precision::f64);
    JointModel model(micro_config());
    TypedGraph g = six_node_graph();
    QueryContext ctx = model.make_query_context("query", {1});
    JointEmbedding e = model.joint_embed(g, ctx, "some text");
    double ss = 0.0;
    for (double v : e.z_normalized.values()) ss += v * v;
    CHECK(std::abs(std::sqrt(ss) - 1.0) < 1e-9);
}

TEST_CASE("changing one relation id changes the joint embedding") {
    JointModel model(micro_config());
    TypedGraph g = six_node_graph();
    TypedGraph g2 = g;
    g2.edges[3].rel = 0;  // was relation 1
    QueryContext ctx = model.make_query_context("query", {1});

    JointEmbedding a = model.joint_embed(g, ctx, "same text");
    JointEmbedding b = model.joint_embed(g2, ctx, "same text");
    CHECK(max_abs_diff(a.z.values(), b.z.values()) > 1e-6);
}

TEST_CASE("text-only ablation equals the frozen sentence embedding") {
    JointModel model(micro_config());
    const std::string text = "graphs are made of nodes and edges";
    JointEmbedding e = model.text_only_embed(text);
    Tensor sent = model.backbone().sentence_embedding(text);
    CHECK(e.z.values() == sent.values());
}

TEST_CASE("trainable parameters exclude the backbone, all parameters include it") {
    JointModel model(micro_config());
    for (Parameter* p : model.trainable_params()) CHECK(p->trainable());
    size_t frozen = 0;
    for (Parameter* p : model.all_params())
        if (!p->trainable()) ++frozen;
    CHECK(frozen == model.backbone().params().size());
    CHECK(model.all_params().size() ==
          model.trainable_params().size() + model.backbone().params().size());
}

TEST_CASE("end-to-end gradient check through the frozen backbone") {
    PrecisionScope ps(Precision::f64);
    TypedGraph g = six_node_graph();
    for (uint64_t seed = 3; seed < 8; ++seed) {
        JointModel model(micro_config(seed));
        QueryContext ctx = model.make_query_context("which entity follows alpha", {1});
        Rng pr(seed ^ 0x51);
        Tensor probe = Tensor::constant({16}, random_vec(pr, 16));

        // linear probe: the eos state is layer-normed, so a quadratic loss on
        // it is nearly constant and finite differences would see only noise
        auto loss = [&] { return dot(model.joint_embed(g, ctx, "beta follows alpha").z, probe); };
        GradReport rep = grad_check(loss, model.trainable_params());
        if (rep.near_kink && seed != 7) continue;
        INFO(rep.summary());
        CHECK(rep.pass());
        CHECK(rep.max_rel_err < 1e-4);
        for (const GradBlockReport& b : rep.blocks) {
            INFO("block " << b.name);
            CHECK(b.analytic_norm > 0.0);  // every trainable block is live
        }
        break;
    }
}

TEST_SUITE_END();
