#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "graft/fusion.hpp"
#include "graft/graph.hpp"
#include "graft/rng.hpp"
#include "graft/tensor.hpp"

namespace graft {

enum class TaskKind { qa, pair, retrieval };

std::string task_kind_name(TaskKind k);
TaskKind parse_task_kind(const std::string& name);  // config_error on unknown

/// Multiple-choice question over one graph: exactly one gold answer.
struct QaInstance {
    std::string id;
    TypedGraph graph;
    std::vector<size_t> linked_node_ids;
    std::string question;
    std::vector<std::string> choices;  // >= 2
    size_t gold = 0;

    bool operator==(const QaInstance&) const = default;
};

/// Does the text faithfully describe the graph? label in {0,1}.
struct PairInstance {
    std::string id;
    TypedGraph graph;
    std::vector<size_t> linked_node_ids;
    std::string text;
    int label = 0;

    bool operator==(const PairInstance&) const = default;
};

/// A query (text, graph) whose positive candidate (text, graph) hides in an
/// evaluation pool of all candidates in the split.
struct RetrievalInstance {
    std::string id;
    TypedGraph query_graph;
    std::vector<size_t> query_linked_ids;
    std::string query_text;
    TypedGraph positive_graph;
    std::vector<size_t> positive_linked_ids;
    std::string positive_text;

    bool operator==(const RetrievalInstance&) const = default;
};

/// How a branch turns (graph, linked ids, query text, input text) into a
/// joint embedding. The original branch runs the full model; the description
/// branch substitutes the cached frozen-backbone vector.
using EmbedFn = std::function<JointEmbedding(
    const TypedGraph& graph, const std::vector<size_t>& linked_ids,
    const std::string& query_text, const std::string& input_text)>;

/// Trainable scoring head: two-layer ReLU MLP from the joint embedding to a
/// single raw score. QA softmaxes scores across choices; the pair task puts
/// a sigmoid on top. Retrieval uses no head.
class ScoreHead {
public:
    // hidden_dim == 0 defaults to in_dim
    ScoreHead(const std::string& name_prefix, size_t in_dim, size_t hidden_dim, Rng& rng);

    Tensor score(const Tensor& z) const;  // [D] -> scalar
    ParamRefs params();

private:
    size_t in_ = 0, hidden_ = 0;
    Parameter w1_, b1_, w2_, b2_;
};

// ---- QA ----

// raw per-choice scores [n_choice]; choice i is embedded with input text
// "<question> <choice_i>" and the question as the query text
Tensor qa_choice_scores(const QaInstance& inst, const EmbedFn& embed, const ScoreHead& head);

Tensor qa_probabilities(const Tensor& scores);  // softmax over choices
size_t qa_predict(const Tensor& scores);        // argmax, first on ties

// -sum_i sum_j y_ij log p_ij over per-instance probability rows; rows are
// clamped at 1e-12 before the log and clamp events are counted into
// *clamped when given
Tensor qa_loss(const std::vector<Tensor>& probabilities, const std::vector<size_t>& gold,
               size_t* clamped = nullptr);

// ---- pair classification ----

Tensor pair_probability(const PairInstance& inst, const EmbedFn& embed, const ScoreHead& head);

// -sum_i ( y_i log p_i + (1-y_i) log(1-p_i) ), same clamping contract
Tensor pair_loss(const std::vector<Tensor>& probabilities, const std::vector<int>& labels,
                 size_t* clamped = nullptr);

// ---- retrieval ----

// in-batch contrastive loss over cosine similarities at temperature tau;
// positives sit on the diagonal. Rows are normalized internally; a
// zero-norm row is a contract_error.
Tensor retrieval_loss(const Tensor& queries, const Tensor& positives, double temperature = 0.05);

struct RankedCandidate {
    std::string id;
    double score = 0.0;
};

// candidates by descending cosine against the query; ties broken by
// ascending id so rankings are deterministic
std::vector<RankedCandidate> rank_by_cosine(
    const std::vector<double>& query,
    const std::vector<std::pair<std::string, std::vector<double>>>& pool);

// ---- combined objective ----

struct LossBreakdown {
    Tensor task;      // scalar
    Tensor infonce;   // scalar (zero when alignment is off)
    Tensor combined;  // task + lambda * infonce
    double lambda = 0.0;
};

LossBreakdown combined_loss(const Tensor& task, const Tensor& align, double lambda);

// ---- metrics ----

double metric_accuracy(const std::vector<size_t>& predictions,
                       const std::vector<size_t>& golds);  // contract_error when empty

// DCG@k with gain / log2(rank + 1), normalized by the ideal ordering of the
// gains; an empty gain map scores 0 and bumps *empty_diagnostic when given
double ndcg_at_k(const std::vector<std::string>& ranked_ids,
                 const std::unordered_map<std::string, double>& gains, size_t k = 10,
                 size_t* empty_diagnostic = nullptr);

}  // namespace graft
