#include "pmetlab/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "pmetlab/backprop.hpp"
#include "pmetlab/rng.hpp"

namespace pmetlab {

void TrainConfig::validate() const {
    if (epochs < 1) throw TrainError("train config: epochs must be >= 1");
    if (batch_size < 1) throw TrainError("train config: batch_size must be >= 1");
    if (learning_rate < 0.0 || learning_rate >= 1.0)
        throw TrainError("train config: learning_rate must lie in [0, 1)");
    if (!(target_memorization > 0.0) || target_memorization > 1.0)
        throw TrainError("train config: target_memorization must lie in (0, 1]");
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kWeightDecay = 0.01;

struct AdamSlot {
    Tensor* weight;
    Tensor* grad;
    Tensor m, v;
    bool decay;
};

std::vector<AdamSlot> make_slots(ToyTransformer& model, ModelGrads& grads) {
    std::vector<AdamSlot> slots;
    auto push = [&](Tensor& w, Tensor& g, bool decay) {
        AdamSlot s;
        s.weight = &w;
        s.grad = &g;
        s.m = w;
        s.m.fill(0.0);
        s.v = s.m;
        s.decay = decay;
        slots.push_back(std::move(s));
    };
    push(model.tok_emb, grads.tok_emb, true);
    push(model.pos_emb, grads.pos_emb, true);
    for (size_t l = 0; l < model.layers.size(); ++l) {
        LayerWeights& w = model.layers[l];
        LayerWeights& g = grads.layers[l];
        push(w.ln_gain, g.ln_gain, false);
        push(w.ln_bias, g.ln_bias, false);
        push(w.wq, g.wq, true);
        push(w.wk, g.wk, true);
        push(w.wv, g.wv, true);
        push(w.wo_attn, g.wo_attn, true);
        push(w.wi, g.wi, true);
        push(w.wo_ffn, g.wo_ffn, true);
    }
    push(model.lnf_gain, grads.lnf_gain, false);
    push(model.lnf_bias, grads.lnf_bias, false);
    return slots;
}

void adam_step(std::vector<AdamSlot>& slots, double lr, int64_t t) {
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (AdamSlot& s : slots) {
        double* w = s.weight->data();
        const double* g = s.grad->data();
        double* m = s.m.data();
        double* v = s.v.data();
        const int64_t n = s.weight->size();
        for (int64_t i = 0; i < n; ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double update = mhat / (std::sqrt(vhat) + kAdamEps);
            if (s.decay) update += kWeightDecay * w[i];
            w[i] -= lr * update;
        }
    }
}

}  // namespace

TrainResult train(ToyTransformer& model, const std::vector<std::string>& texts,
                  const TrainConfig& config, const std::vector<KnowledgeRecord>* records) {
    config.validate();
    if (texts.empty()) throw TrainError("train: empty corpus");

    std::vector<std::vector<int32_t>> encoded;
    encoded.reserve(texts.size());
    for (const std::string& t : texts) {
        std::vector<int32_t> ids = model.encode_with_bos(t);
        ids.push_back(kEosId);
        if (static_cast<int64_t>(ids.size()) > model.config.max_seq_len)
            throw TrainError("train: text exceeds max_seq_len: " + t);
        if (ids.size() < 2) throw TrainError("train: empty text");
        encoded.push_back(std::move(ids));
    }

    ModelGrads grads = ModelGrads::zeros_like(model);
    std::vector<AdamSlot> slots = make_slots(model, grads);
    Rng rng(config.seed);
    const int64_t v = model.config.vocab_size;

    TrainResult result;
    std::vector<double> logp(static_cast<size_t>(v));
    std::vector<size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), size_t{0});
    int64_t adam_t = 0;

    for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_nll = 0.0;
        int64_t epoch_tokens = 0;

        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            int64_t batch_tokens = 0;
            for (size_t b = start; b < end; ++b)
                batch_tokens += static_cast<int64_t>(encoded[order[b]].size()) - 1;

            grads.zero();
            const double inv = 1.0 / static_cast<double>(batch_tokens);
            for (size_t b = start; b < end; ++b) {
                const auto& seq = encoded[order[b]];
                const int64_t z = static_cast<int64_t>(seq.size());
                ForwardCache cache = forward_cached(model, seq);
                Tensor dlogits = Tensor::matrix(z, v);
                for (int64_t t = 0; t < z - 1; ++t) {
                    const int32_t next = seq[static_cast<size_t>(t + 1)];
                    detail::log_softmax_row(cache.logits.row(t), v, logp.data());
                    epoch_nll -= logp[static_cast<size_t>(next)];
                    double* drow = dlogits.row(t);
                    for (int64_t k = 0; k < v; ++k)
                        drow[k] = std::exp(logp[static_cast<size_t>(k)]) * inv;
                    drow[next] -= inv;
                }
                backward(model, cache, dlogits, &grads, nullptr);
            }
            epoch_tokens += batch_tokens;

            if (config.learning_rate > 0.0) adam_step(slots, config.learning_rate, ++adam_t);
        }

        const double mean_nll = epoch_nll / static_cast<double>(epoch_tokens);
        if (!std::isfinite(mean_nll))
            throw TrainError("training diverged: mean NLL non-finite at epoch " +
                             std::to_string(epoch + 1));
        result.epoch_nll.push_back(mean_nll);

        if (records) {
            const double rate = memorization_rate(model, *records);
            result.epoch_memorization.push_back(rate);
            if (rate >= config.target_memorization) break;
        }
    }
    return result;
}

double memorization_rate(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records) {
    if (records.empty()) throw TrainError("memorization_rate: empty record list");

    auto object_id = [&](const std::string& word) {
        const std::vector<int32_t> ids = model.encode(word);
        if (ids.size() != 1)
            throw TrainError("memorization_rate: object '" + word + "' is not a single token");
        return ids[0];
    };

    std::map<std::string, std::set<int32_t>> candidates;
    for (const KnowledgeRecord& rec : records) {
        std::set<int32_t>& pool = candidates[rec.relation];
        pool.insert(object_id(rec.original_object));
        if (rec.target_new) pool.insert(object_id(*rec.target_new));
        for (const NeighborEntry& e : rec.neighborhood) pool.insert(object_id(e.answer));
    }

    int64_t hits = 0;
    for (const KnowledgeRecord& rec : records) {
        const std::vector<int32_t> prompt = model.encode_with_bos(rec.clue);
        const Tensor dist = next_token_distribution(model, prompt);
        const int32_t orig = object_id(rec.original_object);
        const double p_orig = dist.at(orig);
        bool ok = true;
        for (int32_t cand : candidates[rec.relation]) {
            if (cand == orig) continue;
            if (!(p_orig > dist.at(cand))) {
                ok = false;
                break;
            }
        }
        if (ok) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(records.size());
}

void write_history_csv(const std::string& path, const TrainResult& result) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw TrainError("cannot open for writing: " + path);
    out << "epoch,mean_nll,memorization_rate\n";
    char buf[64];
    for (size_t i = 0; i < result.epoch_nll.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.12g", result.epoch_nll[i]);
        out << (i + 1) << ',' << buf << ',';
        if (i < result.epoch_memorization.size()) {
            std::snprintf(buf, sizeof(buf), "%.12g", result.epoch_memorization[i]);
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw TrainError("write failed: " + path);
}

}  // namespace pmetlab
