#include "doctest.h"

#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "graft/gradcheck.hpp"
#include "graft/tasks.hpp"

using namespace graft;
using graft::testutil::PrecisionScope;
using graft::testutil::random_vec;

namespace {

// deterministic stand-in for a joint model: embedding depends only on the
// input text, so equal inputs get equal embeddings
EmbedFn stub_embed(size_t dim) {
    return [dim](const TypedGraph&, const std::vector<size_t>&, const std::string&,
                 const std::string& input) {
        Rng r(fnv1a64(input));
        Tensor z = Tensor::constant({dim}, random_vec(r, dim, -1.0, 1.0));
        return JointEmbedding{z, l2_normalize(z)};
    };
}

QaInstance tiny_qa(std::vector<std::string> choices, size_t gold = 0) {
    QaInstance q;
    q.id = "q0";
    q.graph.relation_count = 1;
    q.graph.nodes = {{0, "a", kNodeTypeLinked}, {1, "b", kNodeTypeRegular}};
    q.graph.edges = {{0, 0, 1}};
    q.linked_node_ids = {0};
    q.question = "which one";
    q.choices = std::move(choices);
    q.gold = gold;
    return q;
}

Tensor unit_rows(Rng& rng, size_t n, size_t d) {
    std::vector<double> v(n * d);
    for (size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (size_t j = 0; j < d; ++j) {
            v[i * d + j] = rng.normal();
            ss += v[i * d + j] * v[i * d + j];
        }
        for (size_t j = 0; j < d; ++j) v[i * d + j] /= std::sqrt(ss);
    }
    return Tensor::constant({n, d}, std::move(v));
}

}  // namespace

TEST_SUITE_BEGIN("tasks");

TEST_CASE("identical choices score identically and softmax to uniform") {
    PrecisionScope ps(Precision::f64);
    Rng rng(2);
    ScoreHead head("head", 8, 0, rng);
    QaInstance q = tiny_qa({"same", "same", "same"});
    Tensor scores = qa_choice_scores(q, stub_embed(8), head);
    REQUIRE(scores.numel() == 3);
    CHECK(scores.values()[0] == scores.values()[1]);
    CHECK(scores.values()[1] == scores.values()[2]);
    Tensor probs = qa_probabilities(scores);
    for (double p : probs.values()) CHECK(std::abs(p - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("shifting every score changes neither prediction nor loss") {
    PrecisionScope ps(Precision::f64);
    Rng rng(3);
    Tensor scores = Tensor::constant({4}, random_vec(rng, 4));
    Tensor shifted = add_scalar(scores, 3.7);
    CHECK(qa_predict(scores) == qa_predict(shifted));
    const double a = qa_loss({qa_probabilities(scores)}, {2}).scalar_value();
    const double b = qa_loss({qa_probabilities(shifted)}, {2}).scalar_value();
    CHECK(std::abs(a - b) < 1e-12);
}

TEST_CASE("argmax survives strictly monotone score transforms") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor scores = Tensor::constant({5}, random_vec(rng, 5));
        const size_t base = qa_predict(scores);
        CHECK(qa_predict(scale(scores, 2.0)) == base);
        CHECK(qa_predict(add_scalar(scores, -1.3)) == base);
        CHECK(qa_predict(exp(scores)) == base);
    }
}

TEST_CASE("uniform five-way probabilities cost ln 5 per sample") {
    PrecisionScope ps(Precision::f64);
    Tensor uniform = Tensor::constant({5}, std::vector<double>(5, 0.2));
    const double loss = qa_loss({uniform}, {3}).scalar_value();
    CHECK(std::abs(loss - std::log(5.0)) < 1e-12);
}

TEST_CASE("one-hot at gold is free; two uniform rows of four cost 2 ln 4") {
    PrecisionScope ps(Precision::f64);
    Tensor onehot = Tensor::constant({4}, {0.0, 1.0, 0.0, 0.0});
    CHECK(std::abs(qa_loss({onehot}, {1}).scalar_value()) < 1e-9);  // clamped zeros elsewhere

    Tensor u = Tensor::constant({4}, std::vector<double>(4, 0.25));
    const double loss = qa_loss({u, u}, {0, 3}).scalar_value();
    CHECK(std::abs(loss - 2.0 * std::log(4.0)) < 1e-12);
}

TEST_CASE("qa loss equals a scalar-loop oracle on random batches") {
    PrecisionScope ps(Precision::f64);
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> rows;
        std::vector<size_t> gold;
        double expected = 0.0;
        for (size_t i = 0; i < 6; ++i) {
            std::vector<double> raw = random_vec(rng, 5, 0.05, 1.0);
            double s = 0.0;
            for (double x : raw) s += x;
            for (double& x : raw) x /= s;
            const size_t g = rng.uniform_int(5);
            expected -= std::log(raw[g]);
            rows.push_back(Tensor::constant({5}, raw));
            gold.push_back(g);
        }
        CHECK(std::abs(qa_loss(rows, gold).scalar_value() - expected) < 1e-9);
    }
}

TEST_CASE("a zero probability at gold clamps and reports the clamp") {
    PrecisionScope ps(Precision::f64);
    Tensor bad = Tensor::constant({3}, {1.0, 0.0, 0.0});
    size_t clamped = 0;
    const double loss = qa_loss({bad}, {2}, &clamped).scalar_value();
    CHECK(clamped == 1);
    CHECK(std::isfinite(loss));
    CHECK(std::abs(loss - (-std::log(1e-12))) < 1e-6);
}

TEST_CASE("perfect pair predictions cost nothing, half-sure costs ln 2") {
    PrecisionScope ps(Precision::f64);
    CHECK(std::abs(pair_loss({Tensor::scalar(1.0)}, {1}).scalar_value()) < 1e-9);
    CHECK(std::abs(pair_loss({Tensor::scalar(0.5)}, {1}).scalar_value() - std::log(2.0)) <
          1e-12);
    CHECK(std::abs(pair_loss({Tensor::scalar(0.5)}, {0}).scalar_value() - std::log(2.0)) <
          1e-12);
}

TEST_CASE("pair loss equals a scalar-loop oracle on random batches") {
    PrecisionScope ps(Precision::f64);
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<Tensor> probs;
        std::vector<int> labels;
        double expected = 0.0;
        for (size_t i = 0; i < 8; ++i) {
            const double p = rng.uniform(0.01, 0.99);
            const int y = rng.uniform_int(2) ? 1 : 0;
            expected -= y ? std::log(p) : std::log(1.0 - p);
            probs.push_back(Tensor::scalar(p));
            labels.push_back(y);
        }
        CHECK(std::abs(pair_loss(probs, labels).scalar_value() - expected) < 1e-9);
    }
}

TEST_CASE("pair labels outside {0,1} are rejected") {
    CHECK_THROWS_AS(pair_loss({Tensor::scalar(0.5)}, {2}), contract_error);
    CHECK_THROWS_AS(pair_loss({Tensor::scalar(0.5)}, {-1}), contract_error);
}

TEST_CASE("pair probability stays inside the open unit interval") {
    Rng rng(12);
    ScoreHead head("head", 8, 0, rng);
    PairInstance inst;
    inst.graph.relation_count = 1;
    inst.graph.nodes = {{0, "a", kNodeTypeLinked}};
    inst.linked_node_ids = {0};
    inst.text = "a description";
    Tensor p = pair_probability(inst, stub_embed(8), head);
    CHECK(p.scalar_value() > 0.0);
    CHECK(p.scalar_value() < 1.0);
}

TEST_CASE("retrieval with a single pair has zero loss") {
    PrecisionScope ps(Precision::f64);
    Rng rng(4);
    Tensor q = unit_rows(rng, 1, 8);
    CHECK(std::abs(retrieval_loss(q, q, 0.05).scalar_value()) < 1e-12);
}

TEST_CASE("infinite temperature flattens retrieval to n ln n") {
    PrecisionScope ps(Precision::f64);
    Rng rng(6);
    const size_t n = 6;
    Tensor q = unit_rows(rng, n, 12);
    Tensor p = unit_rows(rng, n, 12);
    const double loss = retrieval_loss(q, p, 1e9).scalar_value();
    CHECK(std::abs(loss - n * std::log(static_cast<double>(n))) < 1e-6);
}

TEST_CASE("orthonormal matched pairs at unit temperature hit the closed form") {
    PrecisionScope ps(Precision::f64);
    std::vector<double> eye(16, 0.0);
    for (size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 3.0;  // scale must not matter
    Tensor z = Tensor::constant({4, 4}, eye);
    const double expected = 4.0 * std::log(1.0 + 3.0 / std::exp(1.0));
    CHECK(std::abs(retrieval_loss(z, z, 1.0).scalar_value() - expected) < 1e-9);
}

TEST_CASE("retrieval loss is cosine-based: rescaling rows changes nothing") {
    PrecisionScope ps(Precision::f64);
    Rng rng(8);
    Tensor q = unit_rows(rng, 5, 10);
    Tensor p = unit_rows(rng, 5, 10);
    const double base = retrieval_loss(q, p).scalar_value();
    const double scaled = retrieval_loss(scale(q, 7.0), scale(p, 0.25)).scalar_value();
    CHECK(std::abs(base - scaled) < 1e-9);
}

TEST_CASE("zero-norm retrieval rows are a contract violation") {
    Rng rng(3);
    Tensor q = unit_rows(rng, 2, 4);
    Tensor z = Tensor::constant({2, 4}, {1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    CHECK_THROWS_AS(retrieval_loss(q, z), contract_error);
    CHECK_THROWS_AS(retrieval_loss(z, q), contract_error);
}

TEST_CASE("retrieval loss gradient matches finite differences") {
    PrecisionScope ps(Precision::f64);
    Rng rng(15);
    Parameter q("queries", Tensor::leaf({4, 6}, random_vec(rng, 24, -1.0, 1.0)));
    Parameter p("positives", Tensor::leaf({4, 6}, random_vec(rng, 24, -1.0, 1.0)));
    auto loss = [&] { return retrieval_loss(q.tensor(), p.tensor(), 0.5); };
    GradReport rep = grad_check(loss, {&q, &p});
    INFO(rep.summary());
    CHECK(rep.pass());
}

TEST_CASE("a pool of one candidate ranks it first") {
    auto ranked = rank_by_cosine({1.0, 0.0}, {{"only", {0.5, 0.5}}});
    REQUIRE(ranked.size() == 1);
    CHECK(ranked[0].id == "only");
}

TEST_CASE("equal scores fall back to ascending id order") {
    auto ranked = rank_by_cosine({1.0, 0.0}, {{"b", {2.0, 0.0}}, {"a", {5.0, 0.0}}, {"c", {1.0, 0.0}}});
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].id == "a");
    CHECK(ranked[1].id == "b");
    CHECK(ranked[2].id == "c");
}

TEST_CASE("ranking equals a selection-sort oracle on random pools") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t n = 2 + rng.uniform_int(10);
        const size_t d = 3 + rng.uniform_int(5);
        std::vector<double> q = random_vec(rng, d);
        std::vector<std::pair<std::string, std::vector<double>>> pool;
        for (size_t i = 0; i < n; ++i)
            pool.push_back({"c" + std::to_string(i), random_vec(rng, d)});
        if (trial % 3 == 0) pool.push_back({"dup", pool.back().second});  // forced tie

        auto ranked = rank_by_cosine(q, pool);

        // oracle: cosines via plain loops, then repeated max extraction
        std::vector<std::pair<std::string, double>> scored;
        double qn = 0.0;
        for (double x : q) qn += x * x;
        qn = std::sqrt(qn);
        for (const auto& [id, v] : pool) {
            double num = 0.0, vn = 0.0;
            for (size_t j = 0; j < d; ++j) {
                num += q[j] * v[j];
                vn += v[j] * v[j];
            }
            scored.push_back({id, num / (qn * std::sqrt(vn))});
        }
        std::vector<std::string> expect;
        while (!scored.empty()) {
            size_t best = 0;
            for (size_t i = 1; i < scored.size(); ++i) {
                if (scored[i].second > scored[best].second ||
                    (scored[i].second == scored[best].second &&
                     scored[i].first < scored[best].first))
                    best = i;
            }
            expect.push_back(scored[best].first);
            scored.erase(scored.begin() + best);
        }
        REQUIRE(ranked.size() == expect.size());
        for (size_t i = 0; i < expect.size(); ++i) CHECK(ranked[i].id == expect[i]);
    }
}

TEST_CASE("combined loss is the exact affine combination") {
    PrecisionScope ps(Precision::f64);
    LossBreakdown lb = combined_loss(Tensor::scalar(0.0), Tensor::scalar(2.0), 0.5);
    CHECK(lb.combined.scalar_value() == 1.0);
    CHECK(lb.lambda == 0.5);

    LossBreakdown off = combined_loss(Tensor::scalar(3.25), Tensor::scalar(17.0), 0.0);
    CHECK(off.combined.scalar_value() == 3.25);

    Rng rng(2);
    const double t = rng.uniform(0.0, 5.0), a = rng.uniform(0.0, 5.0);
    LossBreakdown mix = combined_loss(Tensor::scalar(t), Tensor::scalar(a), 0.05);
    CHECK(std::abs(mix.combined.scalar_value() - (t + 0.05 * a)) < 1e-9);

    CHECK_THROWS_AS(combined_loss(Tensor::scalar(1.0), Tensor::scalar(1.0), -0.1),
                    config_error);
}

TEST_CASE("combined gradient is task gradient plus lambda times align gradient") {
    PrecisionScope ps(Precision::f64);
    Rng rng(31);
    const double lambda = 0.05;
    std::vector<double> init = random_vec(rng, 6);
    Tensor probe_t = Tensor::constant({6}, random_vec(rng, 6));
    Tensor probe_a = Tensor::constant({6}, random_vec(rng, 6));

    auto grad_of = [&](bool with_task, bool with_align, double lam) {
        Parameter w("w", Tensor::leaf({6}, init));
        Tensor task = with_task ? dot(relu(w.tensor()), probe_t) : Tensor::scalar(0.0);
        Tensor align = with_align ? dot(mul(w.tensor(), w.tensor()), probe_a)
                                  : Tensor::scalar(0.0);
        combined_loss(task, align, lam).combined.backward();
        return w.grad();
    };

    std::vector<double> g_task = grad_of(true, false, lambda);
    std::vector<double> g_align = grad_of(false, true, 1.0);  // bare align gradient
    std::vector<double> g_both = grad_of(true, true, lambda);
    for (size_t i = 0; i < 6; ++i)
        CHECK(std::abs(g_both[i] - (g_task[i] + lambda * g_align[i])) < 1e-12);
}

TEST_CASE("accuracy counts exact matches and refuses empty sets") {
    CHECK(metric_accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(metric_accuracy({1, 2, 3}, {0, 0, 0}) == 0.0);
    CHECK(metric_accuracy({1, 0, 3, 9}, {1, 2, 3, 2}) == 0.5);
    CHECK(metric_accuracy({1, 2, 3, 9}, {1, 2, 3, 2}) == 0.75);
    CHECK_THROWS_AS(metric_accuracy({}, {}), contract_error);
    CHECK_THROWS_AS(metric_accuracy({1}, {1, 2}), shape_error);
}

TEST_CASE("ndcg at the usual checkpoints") {
    size_t empties = 0;
    CHECK(ndcg_at_k({"a", "b", "c"}, {{"a", 1.0}}, 10) == 1.0);
    CHECK(std::abs(ndcg_at_k({"b", "a", "c"}, {{"a", 1.0}}, 10) - 1.0 / std::log2(3.0)) <
          1e-12);
    CHECK(ndcg_at_k({"b", "c", "a"}, {{"a", 1.0}}, 2) == 0.0);  // relevant below the cutoff
    CHECK(ndcg_at_k({"a", "b"}, {}, 10, &empties) == 0.0);
    CHECK(empties == 1);
}

TEST_CASE("graded gains normalize against the ideal ordering") {
    // ranked (g3, g1, g2) with gains 3,1,2: dcg = 3 + 1/log2(3) + 2/2
    // ideal (3,2,1):                        idcg = 3 + 2/log2(3) + 1/2
    const double dcg = 3.0 + 1.0 / std::log2(3.0) + 1.0;
    const double idcg = 3.0 + 2.0 / std::log2(3.0) + 0.5;
    const double got = ndcg_at_k({"g3", "g1", "g2"}, {{"g1", 1.0}, {"g2", 2.0}, {"g3", 3.0}});
    CHECK(std::abs(got - dcg / idcg) < 1e-12);
}

TEST_CASE("score head gradients match finite differences") {
    PrecisionScope ps(Precision::f64);
    for (uint64_t seed = 40; seed < 45; ++seed) {
        Rng rng(seed);
        ScoreHead head("head", 6, 5, rng);
        Tensor z = Tensor::constant({6}, random_vec(rng, 6));
        auto loss = [&] { return head.score(z); };
        GradReport rep = grad_check(loss, head.params());
        if (rep.near_kink && seed != 44) continue;
        INFO(rep.summary());
        CHECK(rep.pass());
        break;
    }
}

TEST_CASE("task kinds round-trip through their names") {
    for (TaskKind k : {TaskKind::qa, TaskKind::pair, TaskKind::retrieval})
        CHECK(parse_task_kind(task_kind_name(k)) == k);
    CHECK_THROWS_AS(parse_task_kind("squash"), config_error);
}

TEST_SUITE_END();
