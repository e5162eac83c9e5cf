#pragma once

#include <string>
#include <vector>

#include "graft/tensor.hpp"

namespace graft {

// Reserved token ids; hashed word ids start at kReservedTokens.
inline constexpr size_t kBosToken = 0;   // <s>
inline constexpr size_t kEosToken = 1;   // </s>
inline constexpr size_t kSepToken = 2;   // <sep>
inline constexpr size_t kUnkToken = 3;   // <unk>
inline constexpr size_t kReservedTokens = 4;

enum class TokenRole { graph_token, bos, text, sep, eos };

/// Embedded input sequence: per-position D_t rows plus role tags.
/// Invariants (checked by encode_sequence): exactly one bos, exactly one
/// eos, eos last; a graph token, if present, is first.
struct TokenSequence {
    Tensor rows;  // [n, D_t]
    std::vector<TokenRole> roles;

    size_t length() const { return roles.size(); }
    size_t eos_pos() const;  // throws contract_error when missing
};

struct BackboneConfig {
    size_t vocab_size = 256;  // includes reserved ids
    size_t dim = 32;          // D_t
    size_t ff_dim = 0;        // 0 -> 4 * dim
    size_t layers = 2;
    size_t heads = 2;
    size_t context = 128;     // max sequence length incl. special tokens
    uint64_t seed = 9001;
};

/// Frozen toy transformer encoder: hash-bucket tokenizer, token + sinusoidal
/// position embeddings, pre-LN bidirectional self-attention stack. Weights
/// are drawn once from the seeded rng and never trained; gradients still
/// flow through them to whatever feeds the input sequence.
class Backbone {
public:
    explicit Backbone(BackboneConfig cfg);

    const BackboneConfig& config() const { return cfg_; }
    size_t dim() const { return cfg_.dim; }
    size_t context() const { return cfg_.context; }

    // lowercase, split on non-alphanumerics, hash into vocab buckets;
    // truncated to the context length
    std::vector<size_t> tokenize(const std::string& text) const;

    Tensor token_rows(const std::vector<size_t>& ids) const;  // [n, D_t]

    // [<s>, tokens(text), </s>] — text truncated so the sequence fits
    TokenSequence text_sequence(const std::string& text) const;

    // final-layer states, one row per position
    Tensor encode_sequence(const TokenSequence& seq) const;

    // final-layer state at the eos position
    Tensor extract_joint(const Tensor& states, const TokenSequence& seq) const;

    // encode [<s>, text, </s>] with the tape off and return the detached
    // eos state; basis for query embeddings and description-branch caching
    Tensor sentence_embedding(const std::string& text) const;

    ParamRefs params();
    const Parameter& token_table() const { return tok_; }

private:
    struct Layer {
        Parameter wq, wk, wv, wo, bo;
        Parameter w1, b1, w2, b2;
    };

    BackboneConfig cfg_;
    Parameter tok_;  // vocab_size x D_t
    Parameter pos_;  // context x D_t, sinusoidal, frozen like the rest
    std::vector<Layer> layers_;
};

}  // namespace graft
