#include "graft/backbone.hpp"

#include <cctype>
#include <cmath>

namespace graft {

size_t TokenSequence::eos_pos() const {
    for (size_t i = 0; i < roles.size(); ++i)
        if (roles[i] == TokenRole::eos) return i;
    throw contract_error("token sequence has no eos");
}

namespace {

void validate_sequence(const TokenSequence& seq, const BackboneConfig& cfg) {
    if (seq.length() == 0) throw contract_error("empty token sequence");
    if (seq.length() > cfg.context) throw shape_error("sequence longer than context length");
    if (!seq.rows.defined() || seq.rows.rows() != seq.length() || seq.rows.cols() != cfg.dim)
        throw shape_error("sequence rows do not match roles/dim");
    size_t bos = 0, eos = 0;
    for (size_t i = 0; i < seq.roles.size(); ++i) {
        if (seq.roles[i] == TokenRole::bos) ++bos;
        if (seq.roles[i] == TokenRole::eos) ++eos;
        if (seq.roles[i] == TokenRole::graph_token && i != 0)
            throw contract_error("graph token must be first");
    }
    if (bos != 1 || eos != 1 || seq.roles.back() != TokenRole::eos)
        throw contract_error("sequence needs exactly one bos and one trailing eos");
}

std::vector<double> sinusoidal_rows(size_t n, size_t d) {
    std::vector<double> v(n * d);
    for (size_t p = 0; p < n; ++p) {
        for (size_t i = 0; i < d; ++i) {
            const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(d));
            const double angle = static_cast<double>(p) * freq;
            v[p * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return v;
}

}  // namespace

Backbone::Backbone(BackboneConfig cfg) : cfg_(cfg) {
    if (cfg_.ff_dim == 0) cfg_.ff_dim = 4 * cfg_.dim;
    if (cfg_.dim == 0 || cfg_.layers == 0 || cfg_.heads == 0)
        throw config_error("backbone dims/layers/heads must be positive");
    if (cfg_.dim % cfg_.heads != 0) throw config_error("heads must divide backbone dim");
    if (cfg_.vocab_size <= kReservedTokens) throw config_error("vocab too small for reserved ids");
    if (cfg_.context < 4) throw config_error("context length must be at least 4");

    Rng rng(cfg_.seed);
    tok_ = Parameter::normal("backbone.tok", {cfg_.vocab_size, cfg_.dim}, rng, 1.0,
                             /*trainable=*/false);
    pos_ = Parameter("backbone.pos",
                     Tensor::constant({cfg_.context, cfg_.dim}, sinusoidal_rows(cfg_.context, cfg_.dim)),
                     /*trainable=*/false);

    layers_.reserve(cfg_.layers);
    for (size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "backbone.l" + std::to_string(l) + ".";
        Layer lay{
            Parameter::xavier(p + "wq", cfg_.dim, cfg_.dim, rng, false),
            Parameter::xavier(p + "wk", cfg_.dim, cfg_.dim, rng, false),
            Parameter::xavier(p + "wv", cfg_.dim, cfg_.dim, rng, false),
            Parameter::xavier(p + "wo", cfg_.dim, cfg_.dim, rng, false),
            Parameter::zeros(p + "bo", {cfg_.dim}, false),
            Parameter::xavier(p + "w1", cfg_.dim, cfg_.ff_dim, rng, false),
            Parameter::zeros(p + "b1", {cfg_.ff_dim}, false),
            Parameter::xavier(p + "w2", cfg_.ff_dim, cfg_.dim, rng, false),
            Parameter::zeros(p + "b2", {cfg_.dim}, false),
        };
        layers_.push_back(std::move(lay));
    }
}

std::vector<size_t> Backbone::tokenize(const std::string& text) const {
    std::vector<size_t> ids;
    std::string word;
    auto flush = [&]() {
        if (word.empty()) return;
        if (ids.size() < cfg_.context)
            ids.push_back(kReservedTokens + fnv1a64(word) % (cfg_.vocab_size - kReservedTokens));
        word.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else
            flush();
    }
    flush();
    return ids;
}

Tensor Backbone::token_rows(const std::vector<size_t>& ids) const {
    return gather_rows(tok_.tensor(), ids);
}

TokenSequence Backbone::text_sequence(const std::string& text) const {
    std::vector<size_t> ids = tokenize(text);
    if (ids.size() > cfg_.context - 2) ids.resize(cfg_.context - 2);
    std::vector<size_t> full;
    full.reserve(ids.size() + 2);
    full.push_back(kBosToken);
    full.insert(full.end(), ids.begin(), ids.end());
    full.push_back(kEosToken);

    TokenSequence seq;
    seq.rows = token_rows(full);
    seq.roles.assign(full.size(), TokenRole::text);
    seq.roles.front() = TokenRole::bos;
    seq.roles.back() = TokenRole::eos;
    return seq;
}

Tensor Backbone::encode_sequence(const TokenSequence& seq) const {
    validate_sequence(seq, cfg_);
    const size_t n = seq.length();
    const size_t d = cfg_.dim;
    const size_t h = cfg_.heads;
    const size_t dh = d / h;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<size_t> positions(n);
    for (size_t i = 0; i < n; ++i) positions[i] = i;
    Tensor x = add(seq.rows, gather_rows(pos_.tensor(), positions));

    for (const Layer& lay : layers_) {
        Tensor a = layer_norm(x);
        Tensor q = matmul(a, lay.wq.tensor());
        Tensor k = matmul(a, lay.wk.tensor());
        Tensor v = matmul(a, lay.wv.tensor());
        std::vector<Tensor> head_outs;
        head_outs.reserve(h);
        for (size_t hi = 0; hi < h; ++hi) {
            Tensor qh = slice_cols(q, hi * dh, dh);
            Tensor kh = slice_cols(k, hi * dh, dh);
            Tensor vh = slice_cols(v, hi * dh, dh);
            Tensor att = row_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
            head_outs.push_back(matmul(att, vh));
        }
        Tensor attn = add(matmul(concat_cols(head_outs), lay.wo.tensor()), lay.bo.tensor());
        x = add(x, attn);

        Tensor b = layer_norm(x);
        Tensor ff = add(matmul(relu(add(matmul(b, lay.w1.tensor()), lay.b1.tensor())),
                               lay.w2.tensor()),
                        lay.b2.tensor());
        x = add(x, ff);
    }
    return layer_norm(x);
}

Tensor Backbone::extract_joint(const Tensor& states, const TokenSequence& seq) const {
    const size_t pos = seq.eos_pos();
    if (states.rows() != seq.length() || states.cols() != cfg_.dim)
        throw shape_error("states do not match sequence");
    return row(states, pos);
}

Tensor Backbone::sentence_embedding(const std::string& text) const {
    NoGradGuard ng;
    TokenSequence seq = text_sequence(text);
    Tensor states = encode_sequence(seq);
    return extract_joint(states, seq).detach();
}

ParamRefs Backbone::params() {
    ParamRefs out{&tok_, &pos_};
    for (Layer& l : layers_) {
        out.push_back(&l.wq);
        out.push_back(&l.wk);
        out.push_back(&l.wv);
        out.push_back(&l.wo);
        out.push_back(&l.bo);
        out.push_back(&l.w1);
        out.push_back(&l.b1);
        out.push_back(&l.w2);
        out.push_back(&l.b2);
    }
    return out;
}

}  // namespace graft
