// graft: one binary for dataset generation, training, evaluation, embedding
// export, and gradient checking of the joint graph-text embedding model.
//
// Commands read a plain-text `key = value` config file; every value can be
// overridden with repeated `--set key=value` flags, and the most common
// ablation axes have dedicated flags. Exit codes: 0 success, 1 usage or
// configuration problem, 2 runtime failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "graft/alignment.hpp"
#include "graft/data.hpp"
#include "graft/error.hpp"
#include "graft/fusion.hpp"
#include "graft/gradcheck.hpp"
#include "graft/tasks.hpp"
#include "graft/tensor.hpp"
#include "graft/training.hpp"

namespace fs = std::filesystem;
using namespace graft;

namespace {

// ---- key = value config files ----------------------------------------------

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::string(buf);
}

/// Raw settings plus the record of what was actually read back out of them.
/// `resolved` ends up holding every key a command used, with defaults filled
/// in, so the echoed config and the checkpoint manifest describe the full
/// effective run.
struct KvConfig {
    std::map<std::string, std::string> raw;
    std::map<std::string, std::string> resolved;
    std::set<std::string> consumed;

    static KvConfig from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw io_error("cannot open config file: " + path);
        KvConfig kv;
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw config_error(path + ":" + std::to_string(line_no) +
                                   ": expected 'key = value', got '" + line + "'");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw config_error(path + ":" + std::to_string(line_no) + ": empty key");
            if (!kv.raw.emplace(key, value).second)
                throw config_error(path + ":" + std::to_string(line_no) + ": duplicate key '" +
                                   key + "'");
        }
        return kv;
    }

    void set(const std::string& key, const std::string& value) { raw[key] = value; }

    void apply_set_flags(const std::vector<std::string>& pairs) {
        for (const std::string& p : pairs) {
            const size_t eq = p.find('=');
            if (eq == std::string::npos || eq == 0)
                throw config_error("--set expects key=value, got '" + p + "'");
            set(trim(p.substr(0, eq)), trim(p.substr(eq + 1)));
        }
    }

    bool has(const std::string& key) const { return raw.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) {
        consumed.insert(key);
        const auto it = raw.find(key);
        const std::string v = it == raw.end() ? def : it->second;
        resolved[key] = v;
        return v;
    }

    std::string get_required(const std::string& key) {
        consumed.insert(key);
        const auto it = raw.find(key);
        if (it == raw.end()) throw config_error("missing required config key '" + key + "'");
        resolved[key] = it->second;
        return it->second;
    }

    double get_double(const std::string& key, double def) {
        consumed.insert(key);
        const auto it = raw.find(key);
        if (it == raw.end()) {
            resolved[key] = format_double(def);
            return def;
        }
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            resolved[key] = it->second;
            return v;
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "': expected a number, got '" +
                               it->second + "'");
        }
    }

    uint64_t get_u64(const std::string& key, uint64_t def) {
        consumed.insert(key);
        const auto it = raw.find(key);
        if (it == raw.end()) {
            resolved[key] = std::to_string(def);
            return def;
        }
        try {
            size_t pos = 0;
            const uint64_t v = std::stoull(it->second, &pos);
            if (pos != it->second.size() || it->second[0] == '-')
                throw std::invalid_argument("trailing");
            resolved[key] = it->second;
            return v;
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "': expected a nonnegative integer, got '" +
                               it->second + "'");
        }
    }

    size_t get_size(const std::string& key, size_t def) {
        return static_cast<size_t>(get_u64(key, static_cast<uint64_t>(def)));
    }

    bool get_bool(const std::string& key, bool def) {
        consumed.insert(key);
        const auto it = raw.find(key);
        if (it == raw.end()) {
            resolved[key] = def ? "true" : "false";
            return def;
        }
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes") {
            resolved[key] = "true";
            return true;
        }
        if (v == "false" || v == "0" || v == "no") {
            resolved[key] = "false";
            return false;
        }
        throw config_error("config key '" + key + "': expected true/false, got '" + v + "'");
    }

    void require_all_consumed() const {
        for (const auto& [key, value] : raw)
            if (!consumed.count(key)) throw config_error("unknown config key '" + key + "'");
    }

    void echo(std::ostream& out) const {
        out << "effective config:\n";
        for (const auto& [key, value] : resolved) out << "  " << key << " = " << value << "\n";
    }

    std::vector<std::pair<std::string, std::string>> resolved_pairs() const {
        return {resolved.begin(), resolved.end()};
    }
};

// ---- typed config builders ---------------------------------------------------

GeneratorSpec build_generator_spec(KvConfig& kv) {
    GeneratorSpec spec;
    spec.seed = kv.get_u64("seed", spec.seed);
    spec.train_size = kv.get_size("train_size", spec.train_size);
    spec.dev_size = kv.get_size("dev_size", spec.dev_size);
    spec.test_size = kv.get_size("test_size", spec.test_size);
    spec.min_nodes = kv.get_size("min_nodes", spec.min_nodes);
    spec.max_nodes = kv.get_size("max_nodes", spec.max_nodes);
    spec.entity_vocab = kv.get_size("entity_vocab", spec.entity_vocab);
    spec.relation_vocab = kv.get_size("relation_vocab", spec.relation_vocab);
    spec.n_choice = kv.get_size("n_choice", spec.n_choice);
    spec.noise_rate = kv.get_double("noise_rate", spec.noise_rate);
    spec.graph_sensitive = kv.get_bool("graph_sensitive", spec.graph_sensitive);
    spec.name_hash_buckets = kv.get_size("name_hash_buckets", spec.name_hash_buckets);
    validate_generator_spec(spec);
    return spec;
}

NodeInitMode parse_init_mode(const std::string& name) {
    if (name == "backbone") return NodeInitMode::backbone_name_encoding;
    if (name == "random") return NodeInitMode::seeded_random;
    throw config_error("init_mode must be 'backbone' or 'random', got '" + name + "'");
}

JointModelConfig build_model_config(KvConfig& kv, size_t default_relation_count) {
    JointModelConfig cfg;
    cfg.backbone.vocab_size = kv.get_size("vocab_size", cfg.backbone.vocab_size);
    cfg.backbone.dim = kv.get_size("dim", cfg.backbone.dim);
    cfg.backbone.ff_dim = kv.get_size("ff_dim", cfg.backbone.ff_dim);
    cfg.backbone.layers = kv.get_size("backbone_layers", cfg.backbone.layers);
    cfg.backbone.heads = kv.get_size("backbone_heads", cfg.backbone.heads);
    cfg.backbone.context = kv.get_size("context", cfg.backbone.context);
    cfg.backbone.seed = kv.get_u64("backbone_seed", cfg.backbone.seed);

    cfg.gnn_hidden = kv.get_size("gnn_hidden", cfg.gnn_hidden);
    cfg.gnn_layers = kv.get_size("gnn_layers", cfg.gnn_layers);
    cfg.gnn_heads = kv.get_size("gnn_heads", cfg.gnn_heads);
    cfg.gnn_dropout = kv.get_double("gnn_dropout", cfg.gnn_dropout);
    cfg.node_type_count = kv.get_size("node_type_count", cfg.node_type_count);
    cfg.relation_count = kv.get_size("relation_count", default_relation_count);
    cfg.d_init = kv.get_size("d_init", cfg.d_init);
    cfg.pool_dim = kv.get_size("pool_dim", cfg.pool_dim);
    cfg.adapter_hidden = kv.get_size("adapter_hidden", cfg.adapter_hidden);
    cfg.init_mode = parse_init_mode(kv.get_string(
        "init_mode", cfg.init_mode == NodeInitMode::backbone_name_encoding ? "backbone"
                                                                           : "random"));
    cfg.init_seed = kv.get_u64("init_seed", cfg.init_seed);
    cfg.receiver_state_messages =
        kv.get_bool("receiver_state_messages", cfg.receiver_state_messages);
    cfg.receiver_normalized = kv.get_bool("receiver_normalized", cfg.receiver_normalized);
    cfg.seed = kv.get_u64("model_seed", cfg.seed);
    return cfg;
}

TrainConfig build_train_config(KvConfig& kv) {
    TrainConfig tc;
    tc.optimizer.learning_rate = kv.get_double("lr", tc.optimizer.learning_rate);
    tc.optimizer.beta1 = kv.get_double("beta1", tc.optimizer.beta1);
    tc.optimizer.beta2 = kv.get_double("beta2", tc.optimizer.beta2);
    tc.optimizer.epsilon = kv.get_double("epsilon", tc.optimizer.epsilon);
    tc.optimizer.weight_decay = kv.get_double("weight_decay", tc.optimizer.weight_decay);
    tc.optimizer.plain_adam = kv.get_bool("plain_adam", tc.optimizer.plain_adam);
    tc.max_grad_norm = kv.get_double("max_grad_norm", tc.max_grad_norm);
    tc.epochs = kv.get_size("epochs", tc.epochs);
    tc.batch_size = kv.get_size("batch_size", tc.batch_size);
    tc.lambda_align = kv.get_double("lambda", tc.lambda_align);
    tc.temperature = kv.get_double("temperature", tc.temperature);
    tc.branch = parse_branch_mode(kv.get_string("branch", branch_mode_name(tc.branch)));
    tc.use_graph = kv.get_bool("use_graph", tc.use_graph);
    tc.shuffle_seed = kv.get_u64("shuffle_seed", tc.shuffle_seed);
    return tc;
}

Precision read_precision(KvConfig& kv, const std::string& def) {
    const std::string p = kv.get_string("precision", def);
    if (p == "f32") return Precision::f32;
    if (p == "f64") return Precision::f64;
    throw config_error("precision must be 'f32' or 'f64', got '" + p + "'");
}

// ---- shared command plumbing -------------------------------------------------

size_t infer_relation_count(const std::vector<DataRecord>& records) {
    size_t rel = 0;
    bool first = true;
    for (const DataRecord& r : records) {
        auto note = [&](const TypedGraph& g) {
            if (first) {
                rel = g.relation_count;
                first = false;
            } else if (g.relation_count != rel) {
                throw config_error("records disagree on relation_count; set it explicitly");
            }
        };
        if (const auto* qa = std::get_if<QaInstance>(&r)) note(qa->graph);
        if (const auto* pr = std::get_if<PairInstance>(&r)) note(pr->graph);
        if (const auto* rt = std::get_if<RetrievalInstance>(&r)) {
            note(rt->query_graph);
            note(rt->positive_graph);
        }
    }
    return rel;
}

struct RestoredModel {
    KvConfig kv;
    TaskKind task = TaskKind::pair;
    std::optional<JointModel> model;
    std::optional<ScoreHead> head;
    TrainConfig train_config;
};

/// Rebuild model + head from a checkpoint manifest and load its parameters.
RestoredModel restore_from_checkpoint(const std::string& base) {
    RestoredModel r;
    for (const auto& [key, value] : read_checkpoint_config(base)) r.kv.set(key, value);
    set_precision(read_precision(r.kv, "f32") == Precision::f32 ? Precision::f32
                                                                : Precision::f64);
    r.task = parse_task_kind(r.kv.get_required("task"));
    const JointModelConfig mc = build_model_config(r.kv, 0);
    r.model.emplace(mc);
    ParamRefs params = r.model->all_params();
    if (r.task != TaskKind::retrieval) {
        Rng head_rng(r.kv.get_u64("head_seed", 101));
        r.head.emplace("head", mc.backbone.dim, r.kv.get_size("head_hidden", 0), head_rng);
        for (Parameter* p : r.head->params()) params.push_back(p);
    }
    load_checkpoint(base, params);
    r.train_config = build_train_config(r.kv);
    return r;
}

void check_kind_matches(TaskKind task, const std::vector<DataRecord>& records,
                        const std::string& data_path) {
    for (const DataRecord& rec : records)
        if (record_kind(rec) != task)
            throw config_error("checkpoint was trained for '" + task_kind_name(task) +
                               "' but " + data_path + " holds '" +
                               task_kind_name(record_kind(rec)) + "' records");
}

void write_eval_tsv(const std::string& path, const std::string& run_id, size_t epoch,
                    const std::string& split, const std::string& metric_name,
                    const EvalResult& ev) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path);
    out << run_id << '\t' << epoch << '\t' << split << '\t' << metric_name << '\t'
        << format_double(ev.metric) << '\n';
    out << run_id << '\t' << epoch << '\t' << split << '\t' << "distance" << '\t'
        << format_double(ev.distance) << '\n';
    out.flush();
    if (!out) throw io_error("write failed: " + path);
}

// ---- commands ------------------------------------------------------------------

int cmd_gen(const std::string& spec_path, const std::string& out_dir,
            const std::vector<std::string>& sets) {
    KvConfig kv = KvConfig::from_file(spec_path);
    kv.apply_set_flags(sets);
    const TaskKind task = parse_task_kind(kv.get_required("task"));
    const GeneratorSpec spec = build_generator_spec(kv);
    kv.require_all_consumed();
    kv.echo(std::cout);

    const SplitRecords data = generate_dataset(task, spec);
    fs::create_directories(out_dir);
    save_records((fs::path(out_dir) / "train.jsonl").string(), data.train);
    save_records((fs::path(out_dir) / "dev.jsonl").string(), data.dev);
    save_records((fs::path(out_dir) / "test.jsonl").string(), data.test);
    std::cout << "wrote " << data.train.size() << " train / " << data.dev.size() << " dev / "
              << data.test.size() << " test " << task_kind_name(task) << " records to "
              << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets) {
    KvConfig kv = KvConfig::from_file(config_path);
    kv.apply_set_flags(sets);

    set_precision(read_precision(kv, "f32"));
    const std::string train_path = kv.get_required("train_data");
    const std::string dev_path = kv.get_required("dev_data");
    const std::string run_id = kv.get_string("run_id", "run");
    const std::string out_dir = kv.get_string("out_dir", ".");

    const std::vector<DataRecord> train_records = load_records(train_path);
    const std::vector<DataRecord> dev_records = load_records(dev_path);
    if (train_records.empty()) throw config_error("train dataset is empty: " + train_path);
    const TaskKind task = record_kind(train_records.front());

    size_t rel = infer_relation_count(train_records);
    const size_t rel_dev = infer_relation_count(dev_records);
    if (rel_dev != rel)
        throw config_error("train and dev datasets disagree on relation_count");
    const JointModelConfig mc = build_model_config(kv, rel);
    if (mc.relation_count < rel)
        throw config_error("relation_count is smaller than the data's relation vocabulary");
    const TrainConfig tc = build_train_config(kv);
    const size_t head_hidden = kv.get_size("head_hidden", 0);
    const uint64_t head_seed = kv.get_u64("head_seed", 101);
    const std::string cache_path = kv.get_string(
        "desc_cache", (fs::path(out_dir) / (run_id + "-desc-cache")).string());
    kv.resolved["task"] = task_kind_name(task);
    kv.require_all_consumed();
    kv.echo(std::cout);

    JointModel model(mc);
    std::optional<ScoreHead> head;
    if (task != TaskKind::retrieval) {
        Rng head_rng(head_seed);
        head.emplace("head", mc.backbone.dim, head_hidden, head_rng);
    }
    fs::create_directories(out_dir);
    DescriptionCache cache(cache_path, mc.backbone.dim, mc.backbone.seed);
    cache.load();

    Trainer trainer(model, head ? &*head : nullptr, tc, &cache);
    const TrainResult res = trainer.train(train_records, dev_records);

    const std::string metric = task_metric_name(task);
    for (const EpochRecord& r : res.epochs) {
        std::cout << "epoch " << r.epoch << "  task_loss " << format_double(r.task_loss)
                  << "  align_loss " << format_double(r.align_loss) << "  combined "
                  << format_double(r.combined_loss) << "  dev_" << metric << " "
                  << format_double(r.dev_metric) << "  dev_distance "
                  << format_double(r.dev_distance) << "\n";
    }
    std::cout << "best epoch " << res.best_epoch << "  dev_" << metric << " "
              << format_double(res.best_dev_metric) << "\n";
    std::cout << "frozen state " << (res.frozen_hash_before == res.frozen_hash_after
                                         ? "unchanged"
                                         : "CHANGED (bug)")
              << "\n";

    auto manifest = kv.resolved_pairs();
    manifest.emplace_back("best_epoch", std::to_string(res.best_epoch));
    manifest.emplace_back("best_dev_metric", format_double(res.best_dev_metric));
    manifest.emplace_back("metric", metric);

    const std::string base = (fs::path(out_dir) / run_id).string();
    ParamRefs params = model.all_params();
    if (head)
        for (Parameter* p : head->params()) params.push_back(p);
    save_checkpoint(base, params, manifest);
    write_metrics_tsv(base + ".tsv", run_id, res.epochs, metric);
    cache.save();
    std::cout << "checkpoint " << base << ".{manifest,params}  metrics " << base << ".tsv\n";

    if (res.aborted) {
        std::cerr << "error: training aborted: " << res.abort_reason
                  << " (best parameters restored)\n";
        return 2;
    }
    if (res.frozen_hash_before != res.frozen_hash_after) {
        std::cerr << "error: frozen backbone state changed during training\n";
        return 2;
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_base, const std::string& data_path,
             const std::string& out_tsv, const std::string& split_label) {
    RestoredModel r = restore_from_checkpoint(ckpt_base);
    const std::vector<DataRecord> records = load_records(data_path);
    if (records.empty()) throw config_error("dataset is empty: " + data_path);
    check_kind_matches(r.task, records, data_path);

    const std::string cache_path = r.kv.get_string("desc_cache", "");
    std::optional<DescriptionCache> cache;
    if (!cache_path.empty()) {
        cache.emplace(cache_path, r.model->config().backbone.dim,
                      r.model->config().backbone.seed);
        cache->load();
    }
    r.kv.echo(std::cout);

    Trainer trainer(*r.model, r.head ? &*r.head : nullptr, r.train_config,
                    cache ? &*cache : nullptr);
    const EvalResult ev = trainer.evaluate(records);

    const std::string metric = task_metric_name(r.task);
    std::cout << metric << " " << format_double(ev.metric) << "\n";
    std::cout << "distance " << format_double(ev.distance) << "\n";
    std::cout << "count " << ev.count << "\n";
    if (!out_tsv.empty()) {
        write_eval_tsv(out_tsv, r.kv.get_string("run_id", "run"),
                       r.kv.get_size("best_epoch", 0), split_label, metric, ev);
        std::cout << "metrics " << out_tsv << "\n";
    }
    return 0;
}

int cmd_embed(const std::string& ckpt_base, const std::string& data_path,
              const std::string& out_base) {
    RestoredModel r = restore_from_checkpoint(ckpt_base);
    const std::vector<DataRecord> records = load_records(data_path);
    r.kv.echo(std::cout);
    if (records.empty())
        std::cerr << "warning: dataset is empty, writing an empty embedding file\n";

    const size_t dim = r.model->config().backbone.dim;
    const bool use_graph = r.train_config.use_graph;

    std::ofstream vf(out_base + ".vectors", std::ios::binary);
    if (!vf) throw io_error("cannot open for writing: " + out_base + ".vectors");
    std::ostringstream ids;

    NoGradGuard ng;
    for (const DataRecord& rec : records) {
        const TypedGraph* g = nullptr;
        const std::vector<size_t>* linked = nullptr;
        const std::string* text = nullptr;
        if (const auto* qa = std::get_if<QaInstance>(&rec)) {
            g = &qa->graph;
            linked = &qa->linked_node_ids;
            text = &qa->question;
        } else if (const auto* pr = std::get_if<PairInstance>(&rec)) {
            g = &pr->graph;
            linked = &pr->linked_node_ids;
            text = &pr->text;
        } else {
            const auto& rt = std::get<RetrievalInstance>(rec);
            g = &rt.query_graph;
            linked = &rt.query_linked_ids;
            text = &rt.query_text;
        }
        JointEmbedding e;
        if (use_graph) {
            const QueryContext ctx = r.model->make_query_context(*text, *linked);
            e = r.model->joint_embed(*g, ctx, *text);
        } else {
            e = r.model->text_only_embed(*text);
        }
        for (double d : e.z.values()) {
            const float f = static_cast<float>(d);
            vf.write(reinterpret_cast<const char*>(&f), sizeof f);
        }
        ids << record_id(rec) << "\n";
    }
    vf.flush();
    if (!vf) throw io_error("write failed: " + out_base + ".vectors");

    std::ofstream mf(out_base + ".manifest", std::ios::binary);
    if (!mf) throw io_error("cannot open for writing: " + out_base + ".manifest");
    mf << "graft-embeddings v1\n"
       << "dim " << dim << "\n"
       << "count " << records.size() << "\n"
       << ids.str();
    mf.flush();
    if (!mf) throw io_error("write failed: " + out_base + ".manifest");

    std::cout << "wrote " << records.size() << " vectors of dim " << dim << " to " << out_base
              << ".{manifest,vectors}\n";
    return 0;
}

int cmd_gradcheck(const std::string& config_path, const std::vector<std::string>& sets,
                  double tol, double step, const std::string& fault) {
    set_precision(Precision::f64);

    KvConfig kv;
    if (!config_path.empty()) kv = KvConfig::from_file(config_path);
    kv.apply_set_flags(sets);
    // micro defaults sized so central differences stay well-conditioned
    JointModelConfig mc;
    mc.backbone.vocab_size = 64;
    mc.backbone.dim = 16;
    mc.backbone.layers = 1;
    mc.backbone.heads = 2;
    mc.backbone.context = 48;
    mc.gnn_hidden = 8;
    mc.gnn_layers = 2;
    mc.gnn_heads = 2;
    mc.relation_count = 2;
    KvConfig defaults;
    defaults.set("vocab_size", "64");
    defaults.set("dim", "16");
    defaults.set("backbone_layers", "1");
    defaults.set("context", "48");
    defaults.set("gnn_hidden", "8");
    defaults.set("gnn_layers", "2");
    defaults.set("relation_count", "2");
    for (const auto& [key, value] : defaults.raw)
        if (!kv.has(key)) kv.set(key, value);
    mc = build_model_config(kv, 2);
    const uint64_t head_seed = kv.get_u64("head_seed", 101);
    const size_t head_hidden = kv.get_size("head_hidden", 0);
    kv.require_all_consumed();
    kv.echo(std::cout);

    JointModel model(mc);
    Rng head_rng(head_seed);
    ScoreHead head("head", mc.backbone.dim, head_hidden, head_rng);

    TypedGraph g;
    g.relation_count = mc.relation_count;
    const char* names[] = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};
    for (size_t i = 0; i < 6; ++i)
        g.nodes.push_back({i, names[i], i == 1 ? kNodeTypeLinked : kNodeTypeRegular});
    g.edges = {{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 4}, {4, 0, 5}, {5, 1, 0}, {1, 0, 4}};
    g.relation_names = {"causes", "requires"};

    const std::string q1 = "which node does alpha cause?";
    const std::string q2 = "what does beta require?";
    const std::string t1 = "alpha causes beta; beta requires gamma";
    const std::string t2 = "zeta causes alpha";
    const std::string desc = serialize_graph(g, g.relation_names).text;
    const Tensor d1 = l2_normalize(description_embedding(model.backbone(), desc, t1));
    const Tensor d2 = l2_normalize(description_embedding(model.backbone(), desc, t2));

    ParamRefs params = model.trainable_params();
    for (Parameter* p : head.params()) params.push_back(p);

    if (!fault.empty()) set_backward_fault(fault);
    auto loss_builder = [&]() -> Tensor {
        const QueryContext c1 = model.make_query_context(q1, {1});
        const QueryContext c2 = model.make_query_context(q2, {2});
        const JointEmbedding e1 = model.joint_embed(g, c1, t1);
        const JointEmbedding e2 = model.joint_embed(g, c2, t2);
        const Tensor task = pair_loss({sigmoid(head.score(e1.z)), sigmoid(head.score(e2.z))},
                                      {1, 0});
        const Tensor align = info_nce(concat_rows({e1.z_normalized, e2.z_normalized}),
                                      concat_rows({d1, d2}), 0.05);
        return combined_loss(scale(task, 0.5), scale(align, 0.5), 0.05).combined;
    };
    const GradReport report = grad_check(loss_builder, params, tol, step);
    set_backward_fault("");
    std::cout << report.summary();
    return report.pass() ? 0 : 2;
}

int run(int argc, char** argv) {
    CLI::App app{"joint graph-text embedding workbench"};
    app.require_subcommand(1);

    std::vector<std::string> sets;
    app.add_option("--set", sets, "override a config value (key=value, repeatable)")
        ->take_all();

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset (three split files)");
    std::string gen_spec, gen_out = ".";
    gen->add_option("--spec", gen_spec, "generator spec file (key = value)")->required();
    gen->add_option("--out", gen_out, "output directory");

    auto* train = app.add_subcommand("train", "train a model, write checkpoint + metrics TSV");
    std::string train_config;
    train->add_option("--config", train_config, "run config file (key = value)")->required();
    bool no_graph = false, no_align = false;
    std::string branch;
    int64_t gnn_layers = 0, epochs = 0;
    double lambda = 0.0;
    std::string run_id, out_dir, precision;
    train->add_flag("--no-graph", no_graph, "ablate the graph branch (text-only embeddings)");
    train->add_flag("--no-align", no_align, "drop the alignment term (lambda = 0)");
    train->add_option("--branch", branch, "dual | orig-only | desc-only");
    train->add_option("--gnn-layers", gnn_layers, "graph encoder depth");
    train->add_option("--epochs", epochs, "training epochs");
    train->add_option("--lambda", lambda, "alignment loss weight");
    train->add_option("--run-id", run_id, "artifact name stem");
    train->add_option("--out-dir", out_dir, "artifact directory");
    train->add_option("--precision", precision, "f32 | f64");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out, eval_split = "eval";
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint base path (no extension)")
        ->required();
    eval->add_option("--data", eval_data, "dataset (.jsonl)")->required();
    eval->add_option("--out", eval_out, "write metric rows to this TSV");
    eval->add_option("--split", eval_split, "split label used in the TSV rows");

    auto* embed = app.add_subcommand("embed", "export joint embeddings for a dataset");
    std::string embed_ckpt, embed_data, embed_out;
    embed->add_option("--checkpoint", embed_ckpt, "checkpoint base path (no extension)")
        ->required();
    embed->add_option("--data", embed_data, "dataset (.jsonl)")->required();
    embed->add_option("--out", embed_out, "output base path (.vectors + .manifest)")
        ->required();

    auto* gradcheck =
        app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    std::string gc_config, gc_fault;
    double gc_tol = 1e-4, gc_step = 1e-5;
    gradcheck->add_option("--config", gc_config, "model config file (micro defaults if absent)");
    gradcheck->add_option("--tol", gc_tol, "max relative error to pass");
    gradcheck->add_option("--step", gc_step, "finite-difference step");
    gradcheck->add_option("--inject-fault", gc_fault,
                          "deliberately corrupt this op's backward pass (e.g. matmul)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems exit 1; --help exits 0
    }

    if (gen->parsed()) return cmd_gen(gen_spec, gen_out, sets);
    if (train->parsed()) {
        if (no_graph) sets.push_back("use_graph=false");
        if (no_align) sets.push_back("lambda=0");
        if (train->count("--branch")) sets.push_back("branch=" + branch);
        if (train->count("--gnn-layers"))
            sets.push_back("gnn_layers=" + std::to_string(gnn_layers));
        if (train->count("--epochs")) sets.push_back("epochs=" + std::to_string(epochs));
        if (train->count("--lambda")) sets.push_back("lambda=" + format_double(lambda));
        if (train->count("--run-id")) sets.push_back("run_id=" + run_id);
        if (train->count("--out-dir")) sets.push_back("out_dir=" + out_dir);
        if (train->count("--precision")) sets.push_back("precision=" + precision);
        return cmd_train(train_config, sets);
    }
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_out, eval_split);
    if (embed->parsed()) return cmd_embed(embed_ckpt, embed_data, embed_out);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_config, sets, gc_tol, gc_step, gc_fault);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
