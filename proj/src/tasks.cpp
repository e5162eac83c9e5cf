#include "graft/tasks.hpp"

#include <algorithm>
#include <cmath>

#include "graft/error.hpp"

namespace graft {

namespace {

constexpr double kProbFloor = 1e-12;

// scalar tensor holding one probability, clamped away from log(0)
Tensor clamped_log(const Tensor& p, size_t* clamped) {
    if (clamped && p.scalar_value() < kProbFloor) ++*clamped;
    return log(clamp_min(p, kProbFloor));
}

}  // namespace

std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::qa: return "qa";
        case TaskKind::pair: return "pair";
        case TaskKind::retrieval: return "retrieval";
    }
    throw config_error("unknown task kind");
}

TaskKind parse_task_kind(const std::string& name) {
    if (name == "qa") return TaskKind::qa;
    if (name == "pair") return TaskKind::pair;
    if (name == "retrieval") return TaskKind::retrieval;
    throw config_error("unknown task '" + name + "' (expected qa, pair, or retrieval)");
}

ScoreHead::ScoreHead(const std::string& name_prefix, size_t in_dim, size_t hidden_dim, Rng& rng)
    : in_(in_dim), hidden_(hidden_dim ? hidden_dim : in_dim),
      w1_(Parameter::xavier(name_prefix + ".w1", in_, hidden_, rng)),
      b1_(Parameter::zeros(name_prefix + ".b1", {hidden_})),
      w2_(Parameter::xavier(name_prefix + ".w2", hidden_, 1, rng)),
      b2_(Parameter::zeros(name_prefix + ".b2", {1})) {
    if (in_ == 0) throw config_error("score head input dim must be positive");
}

Tensor ScoreHead::score(const Tensor& z) const {
    if (z.rank() != 1 || z.numel() != in_)
        throw shape_error("score head expects a vector of width " + std::to_string(in_));
    Tensor h = relu(add(matmul(z, w1_.tensor()), b1_.tensor()));
    Tensor s = add(matmul(h, w2_.tensor()), b2_.tensor());  // [1]
    return reshape(s, {});
}

ParamRefs ScoreHead::params() { return {&w1_, &b1_, &w2_, &b2_}; }

Tensor qa_choice_scores(const QaInstance& inst, const EmbedFn& embed, const ScoreHead& head) {
    if (inst.choices.size() < 2) throw contract_error("qa instance needs at least two choices");
    if (inst.gold >= inst.choices.size()) throw contract_error("qa gold index out of range");
    std::vector<Tensor> scores;
    scores.reserve(inst.choices.size());
    for (const std::string& choice : inst.choices) {
        JointEmbedding e = embed(inst.graph, inst.linked_node_ids, inst.question,
                                 inst.question + " " + choice);
        scores.push_back(reshape(head.score(e.z), {1}));
    }
    return concat(scores, 1);  // [n_choice]
}

Tensor qa_probabilities(const Tensor& scores) {
    if (scores.rank() != 1) throw shape_error("qa probabilities expect a score vector");
    return row_softmax(scores);
}

size_t qa_predict(const Tensor& scores) {
    const std::vector<double>& v = scores.values();
    if (v.empty()) throw contract_error("cannot predict from an empty score vector");
    size_t best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

Tensor qa_loss(const std::vector<Tensor>& probabilities, const std::vector<size_t>& gold,
               size_t* clamped) {
    if (probabilities.size() != gold.size())
        throw shape_error("qa_loss needs one gold index per probability row");
    if (probabilities.empty()) throw contract_error("qa_loss over an empty batch");
    Tensor total = Tensor::scalar(0.0);
    for (size_t i = 0; i < probabilities.size(); ++i) {
        const Tensor& p = probabilities[i];
        if (p.rank() != 1 || gold[i] >= p.numel())
            throw shape_error("qa_loss gold index outside the probability row");
        std::vector<double> onehot(p.numel(), 0.0);
        onehot[gold[i]] = 1.0;
        Tensor at_gold = dot(p, Tensor::constant({p.numel()}, std::move(onehot)));
        total = sub(total, clamped_log(at_gold, clamped));
    }
    return total;
}

Tensor pair_probability(const PairInstance& inst, const EmbedFn& embed, const ScoreHead& head) {
    JointEmbedding e = embed(inst.graph, inst.linked_node_ids, inst.text, inst.text);
    return sigmoid(head.score(e.z));
}

Tensor pair_loss(const std::vector<Tensor>& probabilities, const std::vector<int>& labels,
                 size_t* clamped) {
    if (probabilities.size() != labels.size())
        throw shape_error("pair_loss needs one label per probability");
    if (probabilities.empty()) throw contract_error("pair_loss over an empty batch");
    Tensor total = Tensor::scalar(0.0);
    for (size_t i = 0; i < probabilities.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw contract_error("pair labels must be 0 or 1");
        const Tensor& p = probabilities[i];
        if (p.numel() != 1) throw shape_error("pair_loss expects scalar probabilities");
        Tensor term = labels[i] == 1 ? clamped_log(p, clamped)
                                     : clamped_log(sub(Tensor::scalar(1.0), p), clamped);
        total = sub(total, term);
    }
    return total;
}

Tensor retrieval_loss(const Tensor& queries, const Tensor& positives, double temperature) {
    if (temperature <= 0.0) throw config_error("retrieval temperature must be positive");
    if (queries.rank() != 2 || positives.rank() != 2 || queries.rows() != positives.rows() ||
        queries.cols() != positives.cols())
        throw shape_error("retrieval_loss expects equal [n,d] batches");

    auto reject_zero_rows = [](const Tensor& t) {
        const std::vector<double>& v = t.values();
        const size_t d = t.cols();
        for (size_t i = 0; i < t.rows(); ++i) {
            double ss = 0.0;
            for (size_t j = 0; j < d; ++j) ss += v[i * d + j] * v[i * d + j];
            if (ss == 0.0) throw contract_error("retrieval embedding row has zero norm");
        }
    };
    reject_zero_rows(queries);
    reject_zero_rows(positives);

    const size_t n = queries.rows();
    Tensor s = scale(matmul(l2_normalize(queries), transpose(l2_normalize(positives))),
                     1.0 / temperature);
    std::vector<double> eye(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
    Tensor diag = sum(mul(s, Tensor::constant({n, n}, std::move(eye))));
    return sub(sum(row_logsumexp(s)), diag);
}

std::vector<RankedCandidate> rank_by_cosine(
    const std::vector<double>& query,
    const std::vector<std::pair<std::string, std::vector<double>>>& pool) {
    if (pool.empty()) throw contract_error("rank_by_cosine over an empty pool");
    double qss = 0.0;
    for (double x : query) qss += x * x;
    if (qss == 0.0) throw contract_error("query embedding has zero norm");
    const double qn = std::sqrt(qss);

    std::vector<RankedCandidate> out;
    out.reserve(pool.size());
    for (const auto& [id, vec] : pool) {
        if (vec.size() != query.size()) throw shape_error("pool embedding width mismatch");
        double dot = 0.0, css = 0.0;
        for (size_t j = 0; j < vec.size(); ++j) {
            dot += query[j] * vec[j];
            css += vec[j] * vec[j];
        }
        if (css == 0.0) throw contract_error("candidate embedding has zero norm");
        out.push_back({id, dot / (qn * std::sqrt(css))});
    }
    std::sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    return out;
}

LossBreakdown combined_loss(const Tensor& task, const Tensor& align, double lambda) {
    if (lambda < 0.0) throw config_error("loss weight lambda must be nonnegative");
    LossBreakdown out;
    out.task = task;
    out.infonce = align;
    out.lambda = lambda;
    out.combined = add(task, scale(align, lambda));
    return out;
}

double metric_accuracy(const std::vector<size_t>& predictions,
                       const std::vector<size_t>& golds) {
    if (predictions.size() != golds.size())
        throw shape_error("accuracy needs matching prediction/gold lengths");
    if (predictions.empty()) throw contract_error("accuracy over an empty set is undefined");
    size_t hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i) hits += (predictions[i] == golds[i]);
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double ndcg_at_k(const std::vector<std::string>& ranked_ids,
                 const std::unordered_map<std::string, double>& gains, size_t k,
                 size_t* empty_diagnostic) {
    if (k == 0) throw config_error("ndcg needs k >= 1");
    if (gains.empty()) {
        if (empty_diagnostic) ++*empty_diagnostic;
        return 0.0;
    }
    double dcg = 0.0;
    const size_t depth = std::min(k, ranked_ids.size());
    for (size_t rank = 1; rank <= depth; ++rank) {
        auto it = gains.find(ranked_ids[rank - 1]);
        if (it != gains.end())
            dcg += it->second / std::log2(static_cast<double>(rank) + 1.0);
    }
    std::vector<double> ideal;
    ideal.reserve(gains.size());
    for (const auto& [id, gain] : gains) ideal.push_back(gain);
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (size_t rank = 1; rank <= std::min(k, ideal.size()); ++rank)
        idcg += ideal[rank - 1] / std::log2(static_cast<double>(rank) + 1.0);
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

}  // namespace graft
