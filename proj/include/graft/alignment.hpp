#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "graft/backbone.hpp"
#include "graft/fusion.hpp"
#include "graft/graph.hpp"
#include "graft/tensor.hpp"

namespace graft {

/// Deterministic textual rendering of a graph's triples.
struct GraphDescription {
    std::string text;
    std::string graph_id;
};

/// Renders every edge as "src-name relation-name dst-name", joined by "; "
/// in edge-list order and terminated with "."; the query node and its link
/// edges are skipped, so raw and integrated graphs serialize identically.
/// Empty edge list -> empty string. Throws contract_error when a node or
/// relation lacks a name.
GraphDescription serialize_graph(const TypedGraph& g,
                                 const std::vector<std::string>& relation_names,
                                 std::string graph_id = "");

/// [<s>, description tokens, <sep>, text tokens, </s>]. When over budget the
/// text keeps at least half of the remaining room and the three markers
/// always survive.
TokenSequence build_description_sequence(const Backbone& backbone,
                                         const std::string& description,
                                         const std::string& text);

/// Frozen-backbone eos state of the description sequence: computed with the
/// tape off, detached, and rounded to f32 so cached and freshly computed
/// vectors are bitwise identical in every precision mode.
Tensor description_embedding(const Backbone& backbone, const std::string& description,
                             const std::string& text);

/// Persistent store for description-branch vectors: raw little-endian f32
/// records beside a plain-text manifest (dim, backbone seed, ordered keys).
/// load() accepts the files only when the manifest matches this cache's
/// dim and seed; anything else falls back to an empty cache (recompute).
class DescriptionCache {
public:
    DescriptionCache(std::filesystem::path base_path, size_t dim, uint64_t backbone_seed);

    const std::filesystem::path& base_path() const { return base_; }
    size_t dim() const { return dim_; }
    size_t size() const { return keys_.size(); }

    bool load();
    void save() const;

    bool has(const std::string& key) const { return index_.count(key) != 0; }
    std::vector<double> get(const std::string& key) const;  // contract_error when absent
    void put(const std::string& key, const std::vector<double>& vec);  // f32-rounded

    // stored copy on hit; otherwise compute, store, and return the stored copy
    std::vector<double> get_or_compute(const std::string& key,
                                       const std::function<std::vector<double>()>& compute);

    std::filesystem::path manifest_path() const;
    std::filesystem::path vectors_path() const;

private:
    std::filesystem::path base_;
    size_t dim_ = 0;
    uint64_t seed_ = 0;
    std::vector<std::string> keys_;
    std::unordered_map<std::string, size_t> index_;
    std::vector<float> data_;  // keys_.size() * dim_
};

/// Both branch embeddings of one example. Training uses both; evaluation
/// reads z_orig only.
struct BranchOutputs {
    JointEmbedding z_orig;
    JointEmbedding z_new;
};

/// -sum_i log( exp(s_ii) / sum_j exp(s_ij) ) over s = (Z_orig Z_new^T) / temperature;
/// positives on the diagonal, in-batch rows as negatives. Rows must be unit
/// length within 1e-4 (contract_error) and batches equally sized (shape_error).
Tensor info_nce(const Tensor& z_orig, const Tensor& z_new, double temperature = 1.0);

/// Mean Euclidean distance between matched rows of two unit-row matrices;
/// lies in [0, 2]. Same normalization contract as info_nce.
double alignment_distance(const Tensor& z_orig, const Tensor& z_new);

}  // namespace graft
