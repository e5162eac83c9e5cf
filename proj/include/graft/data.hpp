#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "graft/graph.hpp"
#include "graft/rng.hpp"
#include "graft/tasks.hpp"

namespace graft {

/// One line of a dataset file: an instance of any of the three tasks.
using DataRecord = std::variant<QaInstance, PairInstance, RetrievalInstance>;

TaskKind record_kind(const DataRecord& r);
const std::string& record_id(const DataRecord& r);

struct SplitRecords {
    std::vector<DataRecord> train;
    std::vector<DataRecord> dev;
    std::vector<DataRecord> test;
};

/// Hard ceiling on nodes per generated graph (including the two motif nodes
/// the retrieval generator appends).
inline constexpr size_t kMaxGraphNodes = 200;

/// Knobs shared by the three generators. Same spec -> byte-identical files.
struct GeneratorSpec {
    uint64_t seed = 1234;
    size_t train_size = 64;
    size_t dev_size = 16;
    size_t test_size = 16;
    size_t min_nodes = 6;
    size_t max_nodes = 12;
    size_t entity_vocab = 48;      // distinct entity names to draw from
    size_t relation_vocab = 4;     // distinct relation names to draw from
    size_t n_choice = 5;           // qa: answers per question
    double noise_rate = 0.0;       // pair: probability of flipping a label
    bool graph_sensitive = false;  // pair: text uninformative, label graph-only
    // Entity names are chosen so each lands in a fresh tokenizer hash bucket;
    // keep this equal to the backbone's vocab_size minus its reserved ids.
    size_t name_hash_buckets = 252;
};

/// Throws config_error on any out-of-range field; all generators call this.
void validate_generator_spec(const GeneratorSpec& spec);

/// Names "e<k>", keeping only candidates whose fnv1a64 hash lands in an
/// unclaimed bucket, so hash-bucket token encodings never collide.
std::vector<std::string> entity_vocabulary(size_t count, size_t buckets);

/// A fixed readable list first ("causes", "requires", ...), then "rel<k>".
/// Relation 0 ("causes") doubles as the motif relation for graph-sensitive
/// pairs, so motif_free graphs draw from ids 1 and up.
std::vector<std::string> relation_vocabulary(size_t count);

/// Connected random multigraph: a random spanning tree plus extra edges,
/// node names sampled without replacement from `entities`, no self-loops,
/// every node typed regular. With motif_free, relation 0 is never used.
TypedGraph random_graph(Rng& rng, const GeneratorSpec& spec,
                        const std::vector<std::string>& entities,
                        const std::vector<std::string>& relations, bool motif_free);

/// Graph/text match task. Standard mode: positives pair a graph with its own
/// serialization, negatives with a different record's differing text; labels
/// balanced at ceil(size/2) positives per split. Graph-sensitive mode keeps
/// base graphs motif-free, injects 1-3 motif edges into positives only, and
/// gives every record an unrelated filler text, so the label is decidable
/// only from the graph. noise_rate flips each label independently.
SplitRecords gen_pairs(const GeneratorSpec& spec);

/// Multiple-choice task: "which entity does <src> <relation>?" where the
/// graph is edited to hold exactly one outgoing edge of that relation, the
/// gold choice is its destination's name, and distractors are entity names
/// absent from the graph. Gold position is uniform per record.
SplitRecords gen_qa(const GeneratorSpec& spec);

/// Query/candidate matching: each query and its positive share one motif
/// edge over a pair of per-record-unique entity names, so exactly one
/// candidate in a split's pool is relevant to each query.
SplitRecords gen_retrieval(const GeneratorSpec& spec);

SplitRecords generate_dataset(TaskKind kind, const GeneratorSpec& spec);

/// One-line JSON encoding (stable alphabetical keys, no trailing newline).
std::string record_to_line(const DataRecord& r);

/// Strict parse of one line: unknown fields, missing fields, wrong types,
/// out-of-range ids, and invalid graphs all throw parse_error carrying
/// `line_no`.
DataRecord record_from_line(const std::string& line, size_t line_no);

/// JSON Lines files, UTF-8, one record per line. load throws io_error when
/// the file cannot be opened and parse_error (with line number) on any
/// malformed, truncated, or empty line. save(load(x)) round-trips bytes;
/// load(save(r)) round-trips records.
void save_records(const std::string& path, const std::vector<DataRecord>& records);
std::vector<DataRecord> load_records(const std::string& path);

}  // namespace graft
