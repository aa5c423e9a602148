#include "pmetlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pmetlab/rng.hpp"

namespace pmetlab {

const char* const kSpecialTokens[4] = {"<pad>", "<bos>", "<eos>", "<unk>"};

void ModelConfig::validate() const {
    if (n_layers < 1) throw ModelError("config: n_layers must be >= 1");
    if (d_model < 1 || d_ff < 1 || max_seq_len < 1)
        throw ModelError("config: dims must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
        throw ModelError("config: n_heads must divide d_model (" + std::to_string(d_model) + " % " +
                         std::to_string(n_heads) + " != 0)");
    if (vocab_size < 4) throw ModelError("config: vocab_size must be >= 4 (reserved specials)");
}

void ToyTransformer::rebuild_vocab_index() {
    vocab_index.clear();
    for (size_t i = 0; i < vocab.size(); ++i) {
        auto [it, inserted] = vocab_index.emplace(vocab[i], static_cast<int32_t>(i));
        if (!inserted) throw ModelError("vocabulary: duplicate token '" + vocab[i] + "'");
    }
}

int32_t ToyTransformer::token_id(const std::string& word) const {
    auto it = vocab_index.find(word);
    return it == vocab_index.end() ? kUnkId : it->second;
}

std::vector<int32_t> ToyTransformer::encode(const std::string& text) const {
    std::vector<int32_t> ids;
    std::istringstream is(text);
    std::string word;
    while (is >> word) ids.push_back(token_id(word));
    return ids;
}

std::vector<int32_t> ToyTransformer::encode_with_bos(const std::string& text) const {
    std::vector<int32_t> ids{kBosId};
    for (int32_t id : encode(text)) ids.push_back(id);
    return ids;
}

std::string ToyTransformer::decode(std::span<const int32_t> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        const int32_t id = ids[i];
        if (id < 0 || id >= static_cast<int32_t>(vocab.size()))
            throw ModelError("decode: token id " + std::to_string(id) + " out of range");
        if (i) out += ' ';
        out += vocab[static_cast<size_t>(id)];
    }
    return out;
}

namespace {

void fill_gaussian(Tensor& t, Rng& rng, double std_dev) {
    for (int64_t i = 0; i < t.size(); ++i) t.at(i) = rng.gaussian() * std_dev;
}

}  // namespace

ToyTransformer init_model(const ModelConfig& config, std::vector<std::string> vocab) {
    config.validate();
    if (static_cast<int64_t>(vocab.size()) != config.vocab_size)
        throw ModelError("init_model: vocabulary size " + std::to_string(vocab.size()) +
                         " != config vocab_size " + std::to_string(config.vocab_size));
    for (int i = 0; i < 4; ++i)
        if (vocab[static_cast<size_t>(i)] != kSpecialTokens[i])
            throw ModelError(std::string("init_model: vocab slot ") + std::to_string(i) +
                             " must be " + kSpecialTokens[i]);

    ToyTransformer m;
    m.config = config;
    m.vocab = std::move(vocab);
    m.rebuild_vocab_index();

    Rng rng(config.seed);
    const double std_dev = 0.02;
    const int64_t d = config.d_model, dff = config.d_ff;

    m.tok_emb = Tensor::matrix(config.vocab_size, d);
    fill_gaussian(m.tok_emb, rng, std_dev);
    m.pos_emb = Tensor::matrix(config.max_seq_len, d);
    fill_gaussian(m.pos_emb, rng, std_dev);

    m.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& lw : m.layers) {
        lw.ln_gain = Tensor::vector(d);
        lw.ln_gain.fill(1.0);
        lw.ln_bias = Tensor::vector(d);
        lw.wq = Tensor::matrix(d, d);
        fill_gaussian(lw.wq, rng, std_dev);
        lw.wk = Tensor::matrix(d, d);
        fill_gaussian(lw.wk, rng, std_dev);
        lw.wv = Tensor::matrix(d, d);
        fill_gaussian(lw.wv, rng, std_dev);
        lw.wo_attn = Tensor::matrix(d, d);
        fill_gaussian(lw.wo_attn, rng, std_dev);
        lw.wi = Tensor::matrix(dff, d);
        fill_gaussian(lw.wi, rng, std_dev);
        lw.wo_ffn = Tensor::matrix(d, dff);
        fill_gaussian(lw.wo_ffn, rng, std_dev);
    }
    m.lnf_gain = Tensor::vector(d);
    m.lnf_gain.fill(1.0);
    m.lnf_bias = Tensor::vector(d);
    return m;
}

ToyTransformer init_model(const ModelConfig& config) {
    config.validate();
    std::vector<std::string> vocab;
    vocab.reserve(static_cast<size_t>(config.vocab_size));
    for (int i = 0; i < 4; ++i) vocab.emplace_back(kSpecialTokens[i]);
    for (int64_t i = 4; i < config.vocab_size; ++i) vocab.push_back("tok" + std::to_string(i));
    return init_model(config, std::move(vocab));
}

double gelu(double x) {
    const double c = 0.7978845608028653558798921198687;  // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
    const double c = 0.7978845608028653558798921198687;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

namespace {

void check_tokens(const ToyTransformer& model, std::span<const int32_t> tokens) {
    if (tokens.empty()) throw ModelError("forward: empty token sequence");
    if (static_cast<int64_t>(tokens.size()) > model.config.max_seq_len)
        throw ModelError("forward: sequence length " + std::to_string(tokens.size()) +
                         " exceeds max_seq_len " + std::to_string(model.config.max_seq_len));
    for (int32_t id : tokens)
        if (id < 0 || id >= static_cast<int32_t>(model.config.vocab_size))
            throw ModelError("forward: token id " + std::to_string(id) + " out of range");
}

void check_injections(const ToyTransformer& model, std::span<const int32_t> tokens,
                      std::span<const Injection> injections) {
    const int64_t z = static_cast<int64_t>(tokens.size());
    for (const Injection& inj : injections) {
        if (inj.layer < 1 || inj.layer > model.config.n_layers)
            throw ModelError("injection: layer " + std::to_string(inj.layer) + " out of range [1.." +
                             std::to_string(model.config.n_layers) + "]");
        if (inj.position < 0 || inj.position >= z)
            throw ModelError("injection: position " + std::to_string(inj.position) +
                             " out of range for sequence length " + std::to_string(z));
        for (const auto* delta : {&inj.delta_a, &inj.delta_m})
            if (delta->has_value() &&
                ((*delta)->rank() != 1 || (*delta)->size() != model.config.d_model))
                throw ModelError("injection: delta must be rank-1 of dim d_model");
    }
}

}  // namespace

ForwardCache forward_cached(const ToyTransformer& model, std::span<const int32_t> tokens,
                            std::span<const Injection> injections) {
    check_tokens(model, tokens);
    check_injections(model, tokens, injections);

    const int64_t z = static_cast<int64_t>(tokens.size());
    const int64_t d = model.config.d_model;
    const int64_t dff = model.config.d_ff;
    const int64_t nh = model.config.n_heads;
    const int64_t hd = d / nh;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    ForwardCache cache;
    cache.tokens.assign(tokens.begin(), tokens.end());
    cache.injections.assign(injections.begin(), injections.end());
    cache.layers.resize(static_cast<size_t>(model.config.n_layers));

    Tensor h = Tensor::matrix(z, d);
    for (int64_t t = 0; t < z; ++t) {
        const double* te = model.tok_emb.row(tokens[static_cast<size_t>(t)]);
        const double* pe = model.pos_emb.row(t);
        double* out = h.row(t);
        for (int64_t i = 0; i < d; ++i) out[i] = te[i] + pe[i];
    }

    for (int64_t l = 1; l <= model.config.n_layers; ++l) {
        const LayerWeights& w = model.layers[static_cast<size_t>(l - 1)];
        LayerCache& lc = cache.layers[static_cast<size_t>(l - 1)];
        lc.input = h;

        lc.ln_mean = Tensor::vector(z);
        lc.ln_rstd = Tensor::vector(z);
        lc.normed = Tensor::matrix(z, d);
        for (int64_t t = 0; t < z; ++t)
            detail::layernorm_row(h.row(t), d, w.ln_gain.data(), w.ln_bias.data(), lc.normed.row(t),
                                  &lc.ln_mean.at(t), &lc.ln_rstd.at(t));

        lc.q = matmul_nt(lc.normed, w.wq);
        lc.k = matmul_nt(lc.normed, w.wk);
        lc.v = matmul_nt(lc.normed, w.wv);

        lc.attn_probs.assign(static_cast<size_t>(nh), Tensor::matrix(z, z));
        lc.attn_concat = Tensor::matrix(z, d);
        std::vector<double> scores(static_cast<size_t>(z));
        for (int64_t head = 0; head < nh; ++head) {
            Tensor& probs = lc.attn_probs[static_cast<size_t>(head)];
            const int64_t off = head * hd;
            for (int64_t t = 0; t < z; ++t) {
                const double* qrow = lc.q.row(t) + off;
                for (int64_t s = 0; s <= t; ++s)
                    scores[static_cast<size_t>(s)] =
                        detail::dot_n(qrow, lc.k.row(s) + off, hd) * att_scale;
                detail::softmax_row(scores.data(), t + 1, probs.row(t));
                double* crow = lc.attn_concat.row(t) + off;
                for (int64_t s = 0; s <= t; ++s)
                    detail::axpy_n(crow, probs.at(t, s), lc.v.row(s) + off, hd);
            }
        }
        lc.attn_out = matmul_nt(lc.attn_concat, w.wo_attn);

        lc.ffn_pre = matmul_nt(lc.normed, w.wi);
        lc.ffn_act = Tensor::matrix(z, dff);
        for (int64_t i = 0; i < z * dff; ++i) lc.ffn_act.at(i) = gelu(lc.ffn_pre.at(i));
        lc.ffn_out = matmul_nt(lc.ffn_act, w.wo_ffn);

        for (const Injection& inj : injections) {
            if (inj.layer != l) continue;
            if (inj.delta_a)
                detail::axpy_n(lc.attn_out.row(inj.position), 1.0, inj.delta_a->data(), d);
            if (inj.delta_m)
                detail::axpy_n(lc.ffn_out.row(inj.position), 1.0, inj.delta_m->data(), d);
        }

        lc.output = Tensor::matrix(z, d);
        for (int64_t t = 0; t < z; ++t) {
            const double* in = lc.input.row(t);
            const double* a = lc.attn_out.row(t);
            const double* m = lc.ffn_out.row(t);
            double* out = lc.output.row(t);
            for (int64_t i = 0; i < d; ++i) out[i] = in[i] + a[i] + m[i];
        }
        h = lc.output;
    }

    cache.lnf_mean = Tensor::vector(z);
    cache.lnf_rstd = Tensor::vector(z);
    cache.final_normed = Tensor::matrix(z, d);
    for (int64_t t = 0; t < z; ++t)
        detail::layernorm_row(h.row(t), d, model.lnf_gain.data(), model.lnf_bias.data(),
                              cache.final_normed.row(t), &cache.lnf_mean.at(t),
                              &cache.lnf_rstd.at(t));
    cache.logits = matmul_nt(cache.final_normed, model.tok_emb);
    return cache;
}

ForwardResult forward(const ToyTransformer& model, std::span<const int32_t> tokens,
                      std::span<const Injection> injections) {
    ForwardCache cache = forward_cached(model, tokens, injections);
    ForwardResult r;
    r.logits = cache.logits;
    for (const LayerCache& lc : cache.layers) {
        r.trace.layer_input.push_back(lc.input);
        r.trace.attn_out.push_back(lc.attn_out);
        r.trace.ffn_out.push_back(lc.ffn_out);
        r.trace.layer_output.push_back(lc.output);
    }
    r.trace.final_normed = cache.final_normed;
    return r;
}

Tensor next_token_distribution(const ToyTransformer& model, std::span<const int32_t> tokens,
                               std::span<const Injection> injections) {
    ForwardCache cache = forward_cached(model, tokens, injections);
    const int64_t z = static_cast<int64_t>(tokens.size());
    Tensor out = Tensor::vector(model.config.vocab_size);
    detail::softmax_row(cache.logits.row(z - 1), model.config.vocab_size, out.data());
    return out;
}

std::vector<int32_t> greedy_generate(const ToyTransformer& model,
                                     std::span<const int32_t> prompt, int64_t n_new) {
    if (n_new < 1) throw ModelError("greedy_generate: n_new must be >= 1");
    if (prompt.empty()) throw ModelError("greedy_generate: empty prompt");
    if (static_cast<int64_t>(prompt.size()) + n_new > model.config.max_seq_len)
        throw ModelError("greedy_generate: prompt length " + std::to_string(prompt.size()) +
                         " + n_new " + std::to_string(n_new) + " exceeds max_seq_len " +
                         std::to_string(model.config.max_seq_len));
    std::vector<int32_t> seq(prompt.begin(), prompt.end());
    for (int64_t step = 0; step < n_new; ++step) {
        ForwardCache cache = forward_cached(model, seq);
        const double* logits = cache.logits.row(static_cast<int64_t>(seq.size()) - 1);
        int32_t best = 0;
        for (int64_t v = 1; v < model.config.vocab_size; ++v)
            if (logits[v] > logits[best]) best = static_cast<int32_t>(v);
        seq.push_back(best);
    }
    return seq;
}

namespace {

const LayerCache& cached_layer(const ToyTransformer& model, const ForwardCache& cache,
                               int64_t layer, int64_t position, const char* what) {
    if (layer < 1 || layer > model.config.n_layers)
        throw ModelError(std::string(what) + ": layer " + std::to_string(layer) +
                         " out of range [1.." + std::to_string(model.config.n_layers) + "]");
    if (position < 0 || position >= static_cast<int64_t>(cache.tokens.size()))
        throw ModelError(std::string(what) + ": position " + std::to_string(position) +
                         " out of range");
    return cache.layers[static_cast<size_t>(layer - 1)];
}

}  // namespace

Tensor ffn_key_state(const ToyTransformer& model, std::span<const int32_t> tokens, int64_t layer,
                     int64_t position) {
    ForwardCache cache = forward_cached(model, tokens);
    const LayerCache& lc = cached_layer(model, cache, layer, position, "ffn_key_state");
    Tensor out = Tensor::vector(model.config.d_ff);
    const double* row = lc.ffn_act.row(position);
    for (int64_t i = 0; i < model.config.d_ff; ++i) out.at(i) = row[i];
    return out;
}

Tensor mhsa_key_state(const ToyTransformer& model, std::span<const int32_t> tokens, int64_t layer,
                      int64_t position) {
    ForwardCache cache = forward_cached(model, tokens);
    const LayerCache& lc = cached_layer(model, cache, layer, position, "mhsa_key_state");
    Tensor out = Tensor::vector(model.config.d_model);
    const double* row = lc.attn_concat.row(position);
    for (int64_t i = 0; i < model.config.d_model; ++i) out.at(i) = row[i];
    return out;
}

int64_t subject_last_position(const ToyTransformer& model, std::span<const int32_t> tokens,
                              const std::string& subject) {
    const std::vector<int32_t> subj = model.encode(subject);
    if (subj.empty()) throw ModelError("subject_last_position: empty subject '" + subject + "'");
    const int64_t z = static_cast<int64_t>(tokens.size());
    const int64_t sn = static_cast<int64_t>(subj.size());
    for (int64_t start = z - sn; start >= 0; --start) {
        bool match = true;
        for (int64_t i = 0; i < sn && match; ++i)
            match = tokens[static_cast<size_t>(start + i)] == subj[static_cast<size_t>(i)];
        if (match) return start + sn - 1;
    }
    throw ModelError("subject_last_position: subject '" + subject + "' not found in sequence");
}

}  // namespace pmetlab
