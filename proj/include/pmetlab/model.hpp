#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pmetlab/tensor.hpp"

namespace pmetlab {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// token ids 0..3 are reserved
constexpr int32_t kPadId = 0;
constexpr int32_t kBosId = 1;
constexpr int32_t kEosId = 2;
constexpr int32_t kUnkId = 3;
extern const char* const kSpecialTokens[4];

struct ModelConfig {
    int64_t n_layers = 0;
    int64_t d_model = 0;
    int64_t d_ff = 0;
    int64_t n_heads = 0;
    int64_t vocab_size = 0;
    int64_t max_seq_len = 0;
    uint64_t seed = 0;

    void validate() const;  // throws ModelError
    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Tensor ln_gain, ln_bias;   // [d]
    Tensor wq, wk, wv;         // [d×d]
    Tensor wo_attn;            // [d×d], output projection of MHSA
    Tensor wi;                 // [d_ff×d]
    Tensor wo_ffn;             // [d×d_ff]
};

// Decoder-only transformer with parallel MHSA/FFN branches per layer:
// h^l = h^{l-1} + a^l + m^l, both branches reading one shared layernorm
// of h^{l-1}. Embedding and unembedding share tok_emb storage.
// Layer indices in every public API are 1-based (1..n_layers).
struct ToyTransformer {
    ModelConfig config;
    std::vector<std::string> vocab;  // index = token id
    std::unordered_map<std::string, int32_t> vocab_index;
    Tensor tok_emb;                  // [V×d]
    Tensor pos_emb;                  // [max_seq_len×d]
    std::vector<LayerWeights> layers;
    Tensor lnf_gain, lnf_bias;       // [d]

    void rebuild_vocab_index();
    int32_t token_id(const std::string& word) const;        // unk fallback
    std::vector<int32_t> encode(const std::string& text) const;           // whitespace split
    std::vector<int32_t> encode_with_bos(const std::string& text) const;  // bos + encode
    std::string decode(std::span<const int32_t> ids) const;
};

// Placeholder vocabulary "<pad>,<bos>,<eos>,<unk>,tok4,..." sized to config.
ToyTransformer init_model(const ModelConfig& config);
// Same weights, caller-supplied vocabulary (must match vocab_size, specials first).
ToyTransformer init_model(const ModelConfig& config, std::vector<std::string> vocab);

struct Injection {
    int64_t layer = 0;     // 1-based
    int64_t position = 0;  // 0-based token index
    std::optional<Tensor> delta_a;  // [d]
    std::optional<Tensor> delta_m;  // [d]
};

// Post-injection component states for every layer, copied out of a forward pass.
struct HiddenTrace {
    std::vector<Tensor> layer_input;   // h^{l-1} [z×d], index l-1
    std::vector<Tensor> attn_out;      // a^l [z×d]
    std::vector<Tensor> ffn_out;       // m^l [z×d]
    std::vector<Tensor> layer_output;  // h^l [z×d]
    Tensor final_normed;               // γ_f(h^L) [z×d]
};

// Full per-layer activation record kept for backpropagation.
struct LayerCache {
    Tensor input;        // h^{l-1} [z×d]
    Tensor ln_mean, ln_rstd;  // [z]
    Tensor normed;       // [z×d]
    Tensor q, k, v;      // [z×d]
    std::vector<Tensor> attn_probs;  // per head [z×z], causal rows
    Tensor attn_concat;  // [z×d], pre-output-projection MHSA state
    Tensor attn_out;     // a^l [z×d], after any injection
    Tensor ffn_pre;      // [z×d_ff]
    Tensor ffn_act;      // [z×d_ff], the FFN key states
    Tensor ffn_out;      // m^l [z×d], after any injection
    Tensor output;       // h^l [z×d]
};

struct ForwardCache {
    std::vector<int32_t> tokens;
    std::vector<Injection> injections;
    std::vector<LayerCache> layers;
    Tensor lnf_mean, lnf_rstd;  // [z]
    Tensor final_normed;        // [z×d]
    Tensor logits;              // [z×V]
};

struct ForwardResult {
    Tensor logits;  // [z×V]
    HiddenTrace trace;
};

ForwardCache forward_cached(const ToyTransformer& model, std::span<const int32_t> tokens,
                            std::span<const Injection> injections = {});
ForwardResult forward(const ToyTransformer& model, std::span<const int32_t> tokens,
                      std::span<const Injection> injections = {});

// softmax of last-position logits
Tensor next_token_distribution(const ToyTransformer& model, std::span<const int32_t> tokens,
                               std::span<const Injection> injections = {});

// Argmax decoding, ties to the lowest token id. n_new >= 1.
std::vector<int32_t> greedy_generate(const ToyTransformer& model,
                                     std::span<const int32_t> prompt, int64_t n_new);

// σ(W_I γ(h^{l-1})) at (layer, position): the FFN pre-output activation.
Tensor ffn_key_state(const ToyTransformer& model, std::span<const int32_t> tokens,
                     int64_t layer, int64_t position);
// Pre-output-projection MHSA state (concatenated heads) at (layer, position).
Tensor mhsa_key_state(const ToyTransformer& model, std::span<const int32_t> tokens,
                      int64_t layer, int64_t position);

// Index of the last token of `subject`'s encoding within `tokens`; throws if absent.
int64_t subject_last_position(const ToyTransformer& model, std::span<const int32_t> tokens,
                              const std::string& subject);

double gelu(double x);
double gelu_grad(double x);

}  // namespace pmetlab
