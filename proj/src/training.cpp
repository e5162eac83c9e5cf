#include "graft/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "graft/error.hpp"

namespace graft {

namespace {

void write_u32_le(std::ostream& out, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff),
                       static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

uint32_t read_u32_le(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

TaskKind records_kind(const std::vector<DataRecord>& records, const char* what) {
    if (records.empty()) throw config_error(std::string(what) + " records are empty");
    const TaskKind kind = record_kind(records.front());
    for (const DataRecord& r : records)
        if (record_kind(r) != kind)
            throw config_error(std::string("mixed record kinds in ") + what);
    return kind;
}

const TypedGraph* record_graph(const DataRecord& r) {
    return std::visit(
        [](const auto& rec) -> const TypedGraph* {
            using T = std::decay_t<decltype(rec)>;
            if constexpr (std::is_same_v<T, RetrievalInstance>)
                return &rec.query_graph;
            else
                return &rec.graph;
        },
        r);
}

std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
}

}  // namespace

// ---- optimizer -------------------------------------------------------------

RAdam::RAdam(ParamRefs params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.learning_rate <= 0.0) throw config_error("learning rate must be positive");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
        throw config_error("betas must lie in [0, 1)");
    if (cfg_.epsilon <= 0.0) throw config_error("epsilon must be positive");
    if (cfg_.weight_decay < 0.0) throw config_error("weight decay must be nonnegative");
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i]->trainable()) continue;
        m_[i].assign(params_[i]->numel(), 0.0);
        v_[i].assign(params_[i]->numel(), 0.0);
    }
}

void RAdam::step() {
    // scan first: a non-finite gradient aborts before any state changes
    for (Parameter* p : params_) {
        if (!p->trainable()) continue;
        for (double g : p->grad())
            if (!std::isfinite(g))
                throw domain_error("non-finite gradient in parameter '" + p->name() + "'");
    }

    ++t_;
    beta1_pow_ *= cfg_.beta1;
    beta2_pow_ *= cfg_.beta2;
    const double bias1 = 1.0 - beta1_pow_;
    const double bias2 = 1.0 - beta2_pow_;
    const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * static_cast<double>(t_) * beta2_pow_ / bias2;

    // variance is considered tractable once rho_t exceeds 4; below that the
    // update falls back to the bias-corrected first moment alone
    bool adaptive = true;
    double rectifier = 1.0;
    if (!cfg_.plain_adam) {
        if (rho_t > 4.0) {
            rectifier = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                  ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
        } else {
            adaptive = false;
        }
    }

    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter* p = params_[i];
        if (!p->trainable()) continue;
        const std::vector<double>& g = p->grad();
        std::vector<double> vals = p->values();
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        for (size_t j = 0; j < vals.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bias1;
            const double update =
                adaptive ? rectifier * m_hat / (std::sqrt(v[j] / bias2) + cfg_.epsilon)
                         : m_hat;
            vals[j] -= cfg_.learning_rate * update +
                       cfg_.learning_rate * cfg_.weight_decay * vals[j];
        }
        p->assign(vals);
    }
}

void RAdam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double clip_global_norm(ParamRefs params, double max_norm) {
    if (max_norm <= 0.0) throw config_error("max gradient norm must be positive");
    double sum_sq = 0.0;
    for (Parameter* p : params)
        for (double g : p->grad()) sum_sq += g * g;
    const double norm = std::sqrt(sum_sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (Parameter* p : params)
            for (double& g : p->tensor().mutable_grad()) g *= s;
    }
    return norm;
}

// ---- checkpointing ---------------------------------------------------------

void save_checkpoint(const std::string& base_path, const ParamRefs& params,
                     const std::vector<std::pair<std::string, std::string>>& config) {
    std::unordered_set<std::string> seen;
    for (const Parameter* p : params) {
        if (p->name().empty() || p->name().find_first_of(" \t\n") != std::string::npos)
            throw contract_error("parameter names must be non-empty single tokens");
        if (!seen.insert(p->name()).second)
            throw contract_error("duplicate parameter name '" + p->name() + "'");
    }
    for (const auto& [key, value] : config) {
        if (key.empty() || key.find_first_of(" \t\n") != std::string::npos)
            throw contract_error("config keys must be non-empty single tokens");
        if (value.find('\n') != std::string::npos)
            throw contract_error("config values must be single lines");
    }

    std::ofstream mf(base_path + ".manifest", std::ios::binary);
    if (!mf) throw io_error("cannot open for writing: " + base_path + ".manifest");
    mf << "graft-checkpoint v1\n";
    for (const auto& [key, value] : config) mf << "config " << key << ' ' << value << '\n';
    mf << "params " << params.size() << '\n';
    for (const Parameter* p : params) mf << p->name() << ' ' << p->numel() << '\n';
    mf.flush();
    if (!mf) throw io_error("write failed: " + base_path + ".manifest");

    std::ofstream pf(base_path + ".params", std::ios::binary);
    if (!pf) throw io_error("cannot open for writing: " + base_path + ".params");
    for (const Parameter* p : params)
        for (double d : p->values())
            write_u32_le(pf, std::bit_cast<uint32_t>(static_cast<float>(d)));
    pf.flush();
    if (!pf) throw io_error("write failed: " + base_path + ".params");
}

namespace {

struct Manifest {
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, size_t>> index;  // name, numel
};

Manifest parse_manifest(const std::string& base_path) {
    std::ifstream mf(base_path + ".manifest", std::ios::binary);
    if (!mf) throw io_error("cannot open for reading: " + base_path + ".manifest");
    std::string line;
    if (!std::getline(mf, line) || line != "graft-checkpoint v1")
        throw io_error("unrecognized checkpoint manifest header");

    Manifest m;
    bool in_params = false;
    size_t declared = 0;
    while (std::getline(mf, line)) {
        if (line.empty()) throw io_error("empty manifest line");
        if (!in_params) {
            if (line.rfind("config ", 0) == 0) {
                const std::string rest = line.substr(7);
                const size_t sp = rest.find(' ');
                if (sp == std::string::npos)
                    m.config.emplace_back(rest, "");
                else
                    m.config.emplace_back(rest.substr(0, sp), rest.substr(sp + 1));
            } else if (line.rfind("params ", 0) == 0) {
                try {
                    declared = std::stoul(line.substr(7));
                } catch (const std::exception&) {
                    throw io_error("malformed params count: " + line);
                }
                in_params = true;
            } else {
                throw io_error("unexpected manifest line: " + line);
            }
        } else {
            const size_t sp = line.rfind(' ');
            if (sp == std::string::npos) throw io_error("malformed parameter entry: " + line);
            size_t count = 0;
            try {
                count = std::stoul(line.substr(sp + 1));
            } catch (const std::exception&) {
                throw io_error("malformed parameter entry: " + line);
            }
            m.index.emplace_back(line.substr(0, sp), count);
        }
    }
    if (!in_params || m.index.size() != declared)
        throw io_error("manifest parameter index does not match its declared count");
    return m;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_checkpoint_config(
    const std::string& base_path) {
    return parse_manifest(base_path).config;
}

std::vector<std::pair<std::string, std::string>> load_checkpoint(const std::string& base_path,
                                                                 const ParamRefs& params) {
    Manifest manifest = parse_manifest(base_path);
    const auto& config = manifest.config;
    const auto& index = manifest.index;

    std::unordered_map<std::string, Parameter*> by_name;
    for (Parameter* p : params)
        if (!by_name.emplace(p->name(), p).second)
            throw contract_error("duplicate parameter name '" + p->name() + "'");
    if (by_name.size() != index.size())
        throw contract_error("checkpoint holds a different parameter set");

    std::ifstream pf(base_path + ".params", std::ios::binary);
    if (!pf) throw io_error("cannot open for reading: " + base_path + ".params");
    for (const auto& [name, count] : index) {
        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw contract_error("checkpoint parameter '" + name + "' is not in the model");
        Parameter* p = it->second;
        if (p->numel() != count)
            throw contract_error("size mismatch for parameter '" + name + "'");
        std::vector<double> vals(count);
        for (size_t j = 0; j < count; ++j) {
            const uint32_t u = read_u32_le(pf);
            if (!pf) throw io_error("parameter file truncated");
            vals[j] = static_cast<double>(std::bit_cast<float>(u));
        }
        p->assign(vals);
    }
    if (pf.peek() != std::ifstream::traits_type::eof())
        throw io_error("trailing bytes in parameter file");
    return config;
}

// ---- training --------------------------------------------------------------

std::string branch_mode_name(BranchMode m) {
    switch (m) {
        case BranchMode::dual: return "dual";
        case BranchMode::orig_only: return "orig-only";
        case BranchMode::desc_only: return "desc-only";
    }
    throw config_error("unknown branch mode");
}

BranchMode parse_branch_mode(const std::string& name) {
    if (name == "dual") return BranchMode::dual;
    if (name == "orig-only") return BranchMode::orig_only;
    if (name == "desc-only") return BranchMode::desc_only;
    throw config_error("unknown branch mode '" + name + "'");
}

std::string task_metric_name(TaskKind kind) {
    return kind == TaskKind::retrieval ? "ndcg@10" : "accuracy";
}

uint64_t frozen_state_hash(JointModel& model, const std::vector<const TypedGraph*>& probes) {
    NoGradGuard ng;
    std::string buf;
    auto put_f32 = [&buf](double d) {
        const uint32_t u = std::bit_cast<uint32_t>(static_cast<float>(d));
        buf.push_back(static_cast<char>(u & 0xff));
        buf.push_back(static_cast<char>((u >> 8) & 0xff));
        buf.push_back(static_cast<char>((u >> 16) & 0xff));
        buf.push_back(static_cast<char>((u >> 24) & 0xff));
    };
    for (Parameter* p : model.backbone().params()) {
        buf += p->name();
        buf.push_back(':');
        for (double d : p->values()) put_f32(d);
        buf.push_back(';');
    }
    for (const TypedGraph* g : probes) {
        buf += "#init";
        const Tensor init = model.node_init(*g);
        for (double d : init.values()) put_f32(d);
    }
    return fnv1a64(buf);
}

Trainer::Trainer(JointModel& model, ScoreHead* head, TrainConfig cfg, DescriptionCache* cache)
    : model_(model),
      head_(head),
      cfg_(cfg),
      dropout_rng_(cfg.shuffle_seed ^ 0x5851f42d4c957f2dull) {
    if (cfg_.lambda_align < 0.0) throw config_error("lambda must be nonnegative");
    if (cfg_.temperature <= 0.0) throw config_error("temperature must be positive");
    if (cfg_.max_grad_norm <= 0.0) throw config_error("max gradient norm must be positive");
    if (cfg_.batch_size == 0) throw config_error("batch size must be positive");
    if (cache) {
        cache_ = cache;
    } else {
        own_cache_.emplace("graft-unsaved-description-cache", model_.backbone().config().dim,
                           model_.backbone().config().seed);
        cache_ = &*own_cache_;
    }
    trainables_ = model_.trainable_params();
    if (head_)
        for (Parameter* p : head_->params()) trainables_.push_back(p);
}

ParamRefs Trainer::trainable_params() { return trainables_; }

JointEmbedding Trainer::orig_embedding(const TypedGraph& g, const QueryContext& ctx,
                                       const std::string& input_text, bool training) {
    if (!cfg_.use_graph) return model_.text_only_embed(input_text);
    return model_.joint_embed(g, ctx, input_text, training, &dropout_rng_);
}

JointEmbedding Trainer::desc_embedding(const TypedGraph& g, const std::string& input_text) {
    const std::string desc = serialize_graph(g, g.relation_names).text;
    const std::string key = desc + '\x1f' + input_text;
    std::vector<double> v = cache_->get_or_compute(key, [&] {
        return description_embedding(model_.backbone(), desc, input_text).values();
    });
    Tensor z = Tensor::constant({model_.backbone().config().dim}, std::move(v));
    return {z, l2_normalize(z)};
}

Trainer::BatchOutcome Trainer::run_batch(TaskKind kind,
                                         const std::vector<const DataRecord*>& batch,
                                         RAdam& opt) {
    // domain_error here means the numerics blew up (non-finite op result,
    // non-finite gradient); training aborts gracefully. Contract, shape, and
    // config errors keep propagating: those are caller bugs, not divergence.
    try {
        return run_batch_impl(kind, batch, opt);
    } catch (const domain_error& e) {
        BatchOutcome out;
        out.finite = false;
        out.diagnostic = e.what();
        return out;
    }
}

Trainer::BatchOutcome Trainer::run_batch_impl(TaskKind kind,
                                              const std::vector<const DataRecord*>& batch,
                                              RAdam& opt) {
    BatchOutcome out;
    const bool want_orig = cfg_.branch != BranchMode::desc_only;
    const bool want_desc = cfg_.branch != BranchMode::orig_only;
    const bool want_align = cfg_.branch == BranchMode::dual;
    const double inv = 1.0 / static_cast<double>(batch.size());

    std::vector<Tensor> orig_rows, desc_rows;  // alignment pairs, row i <-> row i
    Tensor task_orig, task_desc;

    switch (kind) {
        case TaskKind::qa: {
            std::vector<Tensor> probs_o, probs_d;
            std::vector<size_t> golds;
            for (const DataRecord* r : batch) {
                const auto& inst = std::get<QaInstance>(*r);
                golds.push_back(inst.gold);
                QueryContext ctx;
                if (want_orig && cfg_.use_graph)
                    ctx = model_.make_query_context(inst.question, inst.linked_node_ids);
                std::vector<Tensor> so, sd;
                for (size_t c = 0; c < inst.choices.size(); ++c) {
                    const std::string input = inst.question + " " + inst.choices[c];
                    if (want_orig) {
                        JointEmbedding e = orig_embedding(inst.graph, ctx, input, true);
                        so.push_back(reshape(head_->score(e.z), {1}));
                        if (want_align && c == inst.gold) orig_rows.push_back(e.z_normalized);
                    }
                    if (want_desc) {
                        JointEmbedding e = desc_embedding(inst.graph, input);
                        sd.push_back(reshape(head_->score(e.z), {1}));
                        if (want_align && c == inst.gold) desc_rows.push_back(e.z_normalized);
                    }
                }
                if (want_orig) probs_o.push_back(qa_probabilities(concat(so, 1)));
                if (want_desc) probs_d.push_back(qa_probabilities(concat(sd, 1)));
            }
            if (want_orig) task_orig = scale(qa_loss(probs_o, golds), inv);
            if (want_desc) task_desc = scale(qa_loss(probs_d, golds), inv);
            break;
        }
        case TaskKind::pair: {
            std::vector<Tensor> probs_o, probs_d;
            std::vector<int> labels;
            for (const DataRecord* r : batch) {
                const auto& inst = std::get<PairInstance>(*r);
                labels.push_back(inst.label);
                if (want_orig) {
                    QueryContext ctx;
                    if (cfg_.use_graph)
                        ctx = model_.make_query_context(inst.text, inst.linked_node_ids);
                    JointEmbedding e = orig_embedding(inst.graph, ctx, inst.text, true);
                    probs_o.push_back(sigmoid(head_->score(e.z)));
                    if (want_align) orig_rows.push_back(e.z_normalized);
                }
                if (want_desc) {
                    JointEmbedding e = desc_embedding(inst.graph, inst.text);
                    probs_d.push_back(sigmoid(head_->score(e.z)));
                    if (want_align) desc_rows.push_back(e.z_normalized);
                }
            }
            if (want_orig) task_orig = scale(pair_loss(probs_o, labels), inv);
            if (want_desc) task_desc = scale(pair_loss(probs_d, labels), inv);
            break;
        }
        case TaskKind::retrieval: {
            std::vector<Tensor> qo, po, qd, pd;
            for (const DataRecord* r : batch) {
                const auto& inst = std::get<RetrievalInstance>(*r);
                if (want_orig) {
                    QueryContext cq, cp;
                    if (cfg_.use_graph) {
                        cq = model_.make_query_context(inst.query_text, inst.query_linked_ids);
                        cp = model_.make_query_context(inst.positive_text,
                                                       inst.positive_linked_ids);
                    }
                    JointEmbedding eq =
                        orig_embedding(inst.query_graph, cq, inst.query_text, true);
                    JointEmbedding ep =
                        orig_embedding(inst.positive_graph, cp, inst.positive_text, true);
                    qo.push_back(eq.z);
                    po.push_back(ep.z);
                    if (want_align) {
                        orig_rows.push_back(eq.z_normalized);
                        orig_rows.push_back(ep.z_normalized);
                    }
                }
                if (want_desc) {
                    JointEmbedding eq = desc_embedding(inst.query_graph, inst.query_text);
                    JointEmbedding ep = desc_embedding(inst.positive_graph, inst.positive_text);
                    qd.push_back(eq.z);
                    pd.push_back(ep.z);
                    if (want_align) {
                        desc_rows.push_back(eq.z_normalized);
                        desc_rows.push_back(ep.z_normalized);
                    }
                }
            }
            if (want_orig)
                task_orig =
                    scale(retrieval_loss(concat_rows(qo), concat_rows(po), cfg_.temperature),
                          inv);
            if (want_desc)
                task_desc =
                    scale(retrieval_loss(concat_rows(qd), concat_rows(pd), cfg_.temperature),
                          inv);
            break;
        }
    }

    const Tensor task = want_orig && want_desc ? scale(add(task_orig, task_desc), 0.5)
                        : want_orig            ? task_orig
                                               : task_desc;
    const Tensor align =
        want_align && !orig_rows.empty()
            ? scale(info_nce(concat_rows(orig_rows), concat_rows(desc_rows), cfg_.temperature),
                    1.0 / static_cast<double>(orig_rows.size()))
            : Tensor::scalar(0.0);
    const LossBreakdown lb = combined_loss(task, align, cfg_.lambda_align);

    out.task = lb.task.scalar_value();
    out.align = lb.infonce.scalar_value();
    out.combined = lb.combined.scalar_value();
    if (!std::isfinite(out.combined)) {
        out.finite = false;
        out.diagnostic = "non-finite loss";
        return out;
    }

    opt.zero_grad();
    lb.combined.backward();
    clip_global_norm(trainables_, cfg_.max_grad_norm);
    opt.step();
    return out;
}

std::vector<std::vector<double>> Trainer::snapshot_params() {
    std::vector<std::vector<double>> snap;
    snap.reserve(trainables_.size());
    for (const Parameter* p : trainables_) snap.push_back(p->values());
    return snap;
}

void Trainer::restore_params(const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < trainables_.size(); ++i) trainables_[i]->assign(snap[i]);
}

TrainResult Trainer::train(const std::vector<DataRecord>& train_set,
                           const std::vector<DataRecord>& dev_set) {
    const TaskKind kind = records_kind(train_set, "train");
    if (records_kind(dev_set, "dev") != kind)
        throw config_error("train and dev splits hold different record kinds");
    if (kind != TaskKind::retrieval && !head_)
        throw contract_error("qa/pair training needs a score head");
    if (cfg_.epochs == 0) throw config_error("epochs must be positive");

    TrainResult result;
    std::vector<const TypedGraph*> probes;
    for (size_t i = 0; i < std::min<size_t>(3, dev_set.size()); ++i)
        probes.push_back(record_graph(dev_set[i]));
    result.frozen_hash_before = frozen_state_hash(model_, probes);

    ParamRefs opt_params = model_.all_params();  // frozen first; zero_grad needs them
    if (head_)
        for (Parameter* p : head_->params()) opt_params.push_back(p);
    RAdam opt(opt_params, cfg_.optimizer);

    const EvalResult ev0 = evaluate(dev_set);
    result.epochs.push_back({0, 0.0, 0.0, 0.0, ev0.metric, ev0.distance});
    result.best_epoch = 0;
    result.best_dev_metric = ev0.metric;
    std::vector<std::vector<double>> best_snap = snapshot_params();

    Rng shuffle_rng(cfg_.shuffle_seed);
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (size_t epoch = 1; epoch <= cfg_.epochs && !result.aborted; ++epoch) {
        shuffle_rng.shuffle(order);
        double sum_task = 0.0, sum_align = 0.0, sum_combined = 0.0;
        for (size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const size_t stop = std::min(order.size(), start + cfg_.batch_size);
            std::vector<const DataRecord*> batch;
            batch.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) batch.push_back(&train_set[order[i]]);
            const BatchOutcome bo = run_batch(kind, batch, opt);
            if (!bo.finite) {
                result.aborted = true;
                result.abort_reason = bo.diagnostic;
                break;
            }
            const double w = static_cast<double>(batch.size());
            sum_task += bo.task * w;
            sum_align += bo.align * w;
            sum_combined += bo.combined * w;
        }
        if (result.aborted) break;

        const double n = static_cast<double>(train_set.size());
        const EvalResult ev = evaluate(dev_set);
        result.epochs.push_back(
            {epoch, sum_task / n, sum_align / n, sum_combined / n, ev.metric, ev.distance});
        if (ev.metric > result.best_dev_metric) {
            result.best_dev_metric = ev.metric;
            result.best_epoch = epoch;
            best_snap = snapshot_params();
        }
    }

    restore_params(best_snap);
    result.frozen_hash_after = frozen_state_hash(model_, probes);
    return result;
}

EvalResult Trainer::evaluate(const std::vector<DataRecord>& records) {
    const TaskKind kind = records_kind(records, "evaluation");
    if (kind != TaskKind::retrieval && !head_)
        throw contract_error("qa/pair evaluation needs a score head");
    NoGradGuard ng;
    EvalResult out;
    out.count = records.size();
    std::vector<Tensor> orig_rows, desc_rows;

    switch (kind) {
        case TaskKind::qa: {
            std::vector<size_t> preds, golds;
            for (const DataRecord& r : records) {
                const auto& inst = std::get<QaInstance>(r);
                QueryContext ctx;
                if (cfg_.use_graph)
                    ctx = model_.make_query_context(inst.question, inst.linked_node_ids);
                double best = 0.0;
                size_t arg = 0;
                for (size_t c = 0; c < inst.choices.size(); ++c) {
                    const std::string input = inst.question + " " + inst.choices[c];
                    const JointEmbedding e = orig_embedding(inst.graph, ctx, input, false);
                    const double s = head_->score(e.z).scalar_value();
                    if (c == 0 || s > best) {  // argmax, first on ties
                        best = s;
                        arg = c;
                    }
                    if (c == inst.gold) {
                        orig_rows.push_back(e.z_normalized);
                        desc_rows.push_back(desc_embedding(inst.graph, input).z_normalized);
                    }
                }
                preds.push_back(arg);
                golds.push_back(inst.gold);
            }
            out.metric = metric_accuracy(preds, golds);
            break;
        }
        case TaskKind::pair: {
            std::vector<size_t> preds, golds;
            for (const DataRecord& r : records) {
                const auto& inst = std::get<PairInstance>(r);
                QueryContext ctx;
                if (cfg_.use_graph)
                    ctx = model_.make_query_context(inst.text, inst.linked_node_ids);
                const JointEmbedding e = orig_embedding(inst.graph, ctx, inst.text, false);
                const double p = sigmoid(head_->score(e.z)).scalar_value();
                preds.push_back(p > 0.5 ? 1 : 0);
                golds.push_back(static_cast<size_t>(inst.label));
                orig_rows.push_back(e.z_normalized);
                desc_rows.push_back(desc_embedding(inst.graph, inst.text).z_normalized);
            }
            out.metric = metric_accuracy(preds, golds);
            break;
        }
        case TaskKind::retrieval: {
            std::vector<std::pair<std::string, std::vector<double>>> pool;
            std::vector<std::vector<double>> queries;
            std::vector<std::string> positive_ids;
            for (const DataRecord& r : records) {
                const auto& inst = std::get<RetrievalInstance>(r);
                QueryContext cq, cp;
                if (cfg_.use_graph) {
                    cq = model_.make_query_context(inst.query_text, inst.query_linked_ids);
                    cp = model_.make_query_context(inst.positive_text, inst.positive_linked_ids);
                }
                const JointEmbedding eq =
                    orig_embedding(inst.query_graph, cq, inst.query_text, false);
                const JointEmbedding ep =
                    orig_embedding(inst.positive_graph, cp, inst.positive_text, false);
                queries.push_back(eq.z_normalized.values());
                pool.emplace_back(inst.id, ep.z_normalized.values());
                positive_ids.push_back(inst.id);
                orig_rows.push_back(eq.z_normalized);
                orig_rows.push_back(ep.z_normalized);
                desc_rows.push_back(desc_embedding(inst.query_graph, inst.query_text).z_normalized);
                desc_rows.push_back(
                    desc_embedding(inst.positive_graph, inst.positive_text).z_normalized);
            }
            double sum_ndcg = 0.0;
            for (size_t i = 0; i < queries.size(); ++i) {
                const auto ranked = rank_by_cosine(queries[i], pool);
                std::vector<std::string> ids;
                ids.reserve(ranked.size());
                for (const RankedCandidate& c : ranked) ids.push_back(c.id);
                sum_ndcg += ndcg_at_k(ids, {{positive_ids[i], 1.0}}, 10);
            }
            out.metric = sum_ndcg / static_cast<double>(queries.size());
            break;
        }
    }

    if (!orig_rows.empty())
        out.distance = alignment_distance(concat_rows(orig_rows), concat_rows(desc_rows));
    return out;
}

void write_metrics_tsv(const std::string& path, const std::string& run_id,
                       const std::vector<EpochRecord>& epochs, const std::string& metric_name) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    for (const EpochRecord& r : epochs) {
        out << run_id << '\t' << r.epoch << "\ttrain\ttask_loss\t" << format_metric(r.task_loss)
            << '\n';
        out << run_id << '\t' << r.epoch << "\ttrain\talign_loss\t"
            << format_metric(r.align_loss) << '\n';
        out << run_id << '\t' << r.epoch << "\ttrain\tcombined_loss\t"
            << format_metric(r.combined_loss) << '\n';
        out << run_id << '\t' << r.epoch << "\tdev\t" << metric_name << '\t'
            << format_metric(r.dev_metric) << '\n';
        out << run_id << '\t' << r.epoch << "\tdev\tdistance\t" << format_metric(r.dev_distance)
            << '\n';
    }
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

}  // namespace graft
