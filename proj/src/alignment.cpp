#include "graft/alignment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <utility>

#include "graft/error.hpp"

namespace graft {

namespace {

void check_unit_rows(const Tensor& z, const char* who) {
    const size_t n = z.rows();
    const size_t d = z.cols();
    const std::vector<double>& v = z.values();
    for (size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (size_t j = 0; j < d; ++j) ss += v[i * d + j] * v[i * d + j];
        if (std::abs(std::sqrt(ss) - 1.0) > 1e-4)
            throw contract_error(std::string(who) + " expects L2-normalized rows");
    }
}

Tensor identity_mask(size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return Tensor::constant({n, n}, std::move(v));
}

void write_u32_le(std::ostream& os, uint32_t x) {
    const char bytes[4] = {static_cast<char>(x & 0xff), static_cast<char>((x >> 8) & 0xff),
                           static_cast<char>((x >> 16) & 0xff),
                           static_cast<char>((x >> 24) & 0xff)};
    os.write(bytes, 4);
}

bool read_u32_le(std::istream& is, uint32_t& x) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4)) return false;
    x = static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
        (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
    return true;
}

constexpr const char* kCacheHeader = "graft-description-cache v1";

}  // namespace

GraphDescription serialize_graph(const TypedGraph& g,
                                 const std::vector<std::string>& relation_names,
                                 std::string graph_id) {
    std::string out;
    bool first = true;
    for (const Edge& e : g.edges) {
        if (e.src >= g.nodes.size() || e.dst >= g.nodes.size())
            throw contract_error("serialize_graph: edge endpoint out of range");
        const Node& s = g.nodes[e.src];
        const Node& d = g.nodes[e.dst];
        if (s.type == kNodeTypeQuery || d.type == kNodeTypeQuery) continue;
        if (s.name.empty() || d.name.empty())
            throw contract_error("serialize_graph: node " +
                                 std::to_string(s.name.empty() ? e.src : e.dst) +
                                 " has no name");
        if (e.rel >= relation_names.size() || relation_names[e.rel].empty())
            throw contract_error("serialize_graph: relation " + std::to_string(e.rel) +
                                 " has no name");
        if (!first) out += "; ";
        out += s.name;
        out += ' ';
        out += relation_names[e.rel];
        out += ' ';
        out += d.name;
        first = false;
    }
    if (!first) out += '.';
    return {std::move(out), std::move(graph_id)};
}

TokenSequence build_description_sequence(const Backbone& backbone,
                                         const std::string& description,
                                         const std::string& text) {
    std::vector<size_t> dtok = backbone.tokenize(description);
    std::vector<size_t> ttok = backbone.tokenize(text);
    const size_t budget = backbone.context() - 3;  // <s>, <sep>, </s>

    if (dtok.size() + ttok.size() > budget) {
        const size_t min_text = std::min(ttok.size(), budget / 2);
        const size_t desc_keep = std::min(dtok.size(), budget - min_text);
        const size_t text_keep = budget - desc_keep;
        dtok.resize(desc_keep);
        if (ttok.size() > text_keep) ttok.resize(text_keep);
    }

    std::vector<size_t> ids;
    ids.reserve(dtok.size() + ttok.size() + 3);
    ids.push_back(kBosToken);
    ids.insert(ids.end(), dtok.begin(), dtok.end());
    ids.push_back(kSepToken);
    ids.insert(ids.end(), ttok.begin(), ttok.end());
    ids.push_back(kEosToken);

    TokenSequence seq;
    seq.rows = backbone.token_rows(ids);
    seq.roles.reserve(ids.size());
    seq.roles.push_back(TokenRole::bos);
    seq.roles.insert(seq.roles.end(), dtok.size(), TokenRole::text);
    seq.roles.push_back(TokenRole::sep);
    seq.roles.insert(seq.roles.end(), ttok.size(), TokenRole::text);
    seq.roles.push_back(TokenRole::eos);
    return seq;
}

Tensor description_embedding(const Backbone& backbone, const std::string& description,
                             const std::string& text) {
    NoGradGuard ng;
    TokenSequence seq = build_description_sequence(backbone, description, text);
    Tensor states = backbone.encode_sequence(seq);
    Tensor z = backbone.extract_joint(states, seq);
    return Tensor::constant({backbone.dim()}, rounded_to_f32(z.values()));
}

DescriptionCache::DescriptionCache(std::filesystem::path base_path, size_t dim,
                                   uint64_t backbone_seed)
    : base_(std::move(base_path)), dim_(dim), seed_(backbone_seed) {
    if (dim_ == 0) throw config_error("description cache dim must be positive");
}

std::filesystem::path DescriptionCache::manifest_path() const {
    return std::filesystem::path(base_.string() + ".manifest");
}

std::filesystem::path DescriptionCache::vectors_path() const {
    return std::filesystem::path(base_.string() + ".vec");
}

bool DescriptionCache::load() {
    keys_.clear();
    index_.clear();
    data_.clear();

    std::ifstream mf(manifest_path());
    if (!mf) return false;
    std::string header;
    if (!std::getline(mf, header) || header != kCacheHeader) return false;

    std::string line;
    size_t dim = 0, count = 0;
    uint64_t seed = 0;
    auto parse_kv = [&](const char* key, auto& out) {
        if (!std::getline(mf, line)) return false;
        std::istringstream iss(line);
        std::string k;
        return static_cast<bool>(iss >> k >> out) && k == key;
    };
    if (!parse_kv("dim", dim) || !parse_kv("backbone_seed", seed) || !parse_kv("count", count))
        return false;
    if (dim != dim_ || seed != seed_) return false;

    std::vector<std::string> keys;
    keys.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        if (!std::getline(mf, line) || line.empty()) return false;
        keys.push_back(line);
    }

    std::ifstream vf(vectors_path(), std::ios::binary);
    if (!vf) return false;
    std::vector<float> data(count * dim_);
    for (float& f : data) {
        uint32_t bits = 0;
        if (!read_u32_le(vf, bits)) return false;
        f = std::bit_cast<float>(bits);
    }
    if (vf.peek() != std::char_traits<char>::eof()) return false;

    keys_ = std::move(keys);
    data_ = std::move(data);
    for (size_t i = 0; i < keys_.size(); ++i) index_[keys_[i]] = i;
    return true;
}

void DescriptionCache::save() const {
    if (base_.has_parent_path()) std::filesystem::create_directories(base_.parent_path());

    std::ofstream mf(manifest_path(), std::ios::trunc);
    if (!mf) throw io_error("cannot write " + manifest_path().string());
    mf << kCacheHeader << "\n"
       << "dim " << dim_ << "\n"
       << "backbone_seed " << seed_ << "\n"
       << "count " << keys_.size() << "\n";
    for (const std::string& k : keys_) mf << k << "\n";
    if (!mf) throw io_error("failed writing " + manifest_path().string());

    std::ofstream vf(vectors_path(), std::ios::binary | std::ios::trunc);
    if (!vf) throw io_error("cannot write " + vectors_path().string());
    for (float f : data_) write_u32_le(vf, std::bit_cast<uint32_t>(f));
    if (!vf) throw io_error("failed writing " + vectors_path().string());
}

std::vector<double> DescriptionCache::get(const std::string& key) const {
    auto it = index_.find(key);
    if (it == index_.end()) throw contract_error("description cache has no entry '" + key + "'");
    std::vector<double> out(dim_);
    const float* rowp = data_.data() + it->second * dim_;
    for (size_t j = 0; j < dim_; ++j) out[j] = static_cast<double>(rowp[j]);
    return out;
}

void DescriptionCache::put(const std::string& key, const std::vector<double>& vec) {
    if (key.empty() || key.find('\n') != std::string::npos)
        throw contract_error("description cache keys must be nonempty single-line strings");
    if (vec.size() != dim_) throw shape_error("description cache row width mismatch");

    auto it = index_.find(key);
    size_t row;
    if (it != index_.end()) {
        row = it->second;
    } else {
        row = keys_.size();
        keys_.push_back(key);
        index_[key] = row;
        data_.resize(keys_.size() * dim_, 0.0f);
    }
    for (size_t j = 0; j < dim_; ++j) data_[row * dim_ + j] = static_cast<float>(vec[j]);
}

std::vector<double> DescriptionCache::get_or_compute(
    const std::string& key, const std::function<std::vector<double>()>& compute) {
    if (!has(key)) put(key, compute());
    return get(key);
}

Tensor info_nce(const Tensor& z_orig, const Tensor& z_new, double temperature) {
    if (temperature <= 0.0) throw config_error("info_nce temperature must be positive");
    if (z_orig.rank() != 2 || z_new.rank() != 2)
        throw shape_error("info_nce expects [n,d] batches");
    if (z_orig.rows() != z_new.rows() || z_orig.cols() != z_new.cols())
        throw shape_error("info_nce batches must have equal shape");
    if (z_orig.rows() == 0) throw shape_error("info_nce needs at least one row");
    check_unit_rows(z_orig, "info_nce");
    check_unit_rows(z_new, "info_nce");

    const size_t n = z_orig.rows();
    Tensor s = scale(matmul(z_orig, transpose(z_new)), 1.0 / temperature);
    Tensor lse = row_logsumexp(s);                    // [n]
    Tensor diag = sum(mul(s, identity_mask(n)));      // sum of positive logits
    return sub(sum(lse), diag);
}

double alignment_distance(const Tensor& z_orig, const Tensor& z_new) {
    if (z_orig.rank() != 2 || z_new.rank() != 2 || z_orig.rows() != z_new.rows() ||
        z_orig.cols() != z_new.cols())
        throw shape_error("alignment_distance expects equal [n,d] batches");
    if (z_orig.rows() == 0) throw shape_error("alignment_distance needs at least one row");
    check_unit_rows(z_orig, "alignment_distance");
    check_unit_rows(z_new, "alignment_distance");

    const size_t n = z_orig.rows();
    const size_t d = z_orig.cols();
    const std::vector<double>& a = z_orig.values();
    const std::vector<double>& b = z_new.values();
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double ss = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double diff = a[i * d + j] - b[i * d + j];
            ss += diff * diff;
        }
        total += std::sqrt(ss);
    }
    return total / static_cast<double>(n);
}

}  // namespace graft
