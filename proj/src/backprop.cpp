#include "pmetlab/backprop.hpp"

#include <cmath>

namespace pmetlab {

ModelGrads ModelGrads::zeros_like(const ToyTransformer& model) {
    const int64_t d = model.config.d_model, dff = model.config.d_ff;
    ModelGrads g;
    g.tok_emb = Tensor::matrix(model.config.vocab_size, d);
    g.pos_emb = Tensor::matrix(model.config.max_seq_len, d);
    g.layers.resize(model.layers.size());
    for (auto& lw : g.layers) {
        lw.ln_gain = Tensor::vector(d);
        lw.ln_bias = Tensor::vector(d);
        lw.wq = Tensor::matrix(d, d);
        lw.wk = Tensor::matrix(d, d);
        lw.wv = Tensor::matrix(d, d);
        lw.wo_attn = Tensor::matrix(d, d);
        lw.wi = Tensor::matrix(dff, d);
        lw.wo_ffn = Tensor::matrix(d, dff);
    }
    g.lnf_gain = Tensor::vector(d);
    g.lnf_bias = Tensor::vector(d);
    return g;
}

void ModelGrads::zero() {
    tok_emb.fill(0.0);
    pos_emb.fill(0.0);
    for (auto& lw : layers) {
        lw.ln_gain.fill(0.0);
        lw.ln_bias.fill(0.0);
        lw.wq.fill(0.0);
        lw.wk.fill(0.0);
        lw.wv.fill(0.0);
        lw.wo_attn.fill(0.0);
        lw.wi.fill(0.0);
        lw.wo_ffn.fill(0.0);
    }
    lnf_gain.fill(0.0);
    lnf_bias.fill(0.0);
}

DeltaGradSlots DeltaGradSlots::zeros_for(const ForwardCache& cache, int64_t d_model) {
    DeltaGradSlots s;
    for (size_t i = 0; i < cache.injections.size(); ++i) {
        s.delta_a.push_back(Tensor::vector(d_model));
        s.delta_m.push_back(Tensor::vector(d_model));
    }
    return s;
}

namespace {

// d(layernorm)/dx for one row given cached mean/rstd; adds into dx_row,
// optionally accumulates gain/bias grads.
void layernorm_backward_row(const double* x, const double* dy, const double* gain, int64_t n,
                            double mean, double rstd, double* dx_row, double* dgain, double* dbias) {
    double sum1 = 0.0, sum2 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double xhat = (x[i] - mean) * rstd;
        const double dyh = dy[i] * gain[i];
        sum1 += dyh;
        sum2 += dyh * xhat;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        const double xhat = (x[i] - mean) * rstd;
        const double dyh = dy[i] * gain[i];
        dx_row[i] += rstd * (dyh - sum1 * inv_n - xhat * sum2 * inv_n);
        if (dgain) dgain[i] += dy[i] * xhat;
        if (dbias) dbias[i] += dy[i];
    }
}

}  // namespace

void backward(const ToyTransformer& model, const ForwardCache& cache, const Tensor& dlogits,
              ModelGrads* weight_grads, DeltaGradSlots* delta_grads) {
    const int64_t z = static_cast<int64_t>(cache.tokens.size());
    const int64_t d = model.config.d_model;
    const int64_t nh = model.config.n_heads;
    const int64_t hd = d / nh;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    if (dlogits.rows() != z || dlogits.cols() != model.config.vocab_size)
        throw ModelError("backward: dlogits shape " + dlogits.shape_str() + " does not match [" +
                         std::to_string(z) + "x" + std::to_string(model.config.vocab_size) + "]");
    if (delta_grads && (delta_grads->delta_a.size() != cache.injections.size() ||
                        delta_grads->delta_m.size() != cache.injections.size()))
        throw ModelError("backward: delta grad slots do not match cached injections");

    // unembedding: logits = final_normed · tok_embᵀ
    Tensor d_final_normed = Tensor::matrix(z, d);
    addmm_nn(d_final_normed, dlogits, model.tok_emb);
    if (weight_grads) addmm_tn(weight_grads->tok_emb, dlogits, cache.final_normed);

    // final layernorm
    Tensor dh = Tensor::matrix(z, d);
    const Tensor& h_last = cache.layers.back().output;
    for (int64_t t = 0; t < z; ++t)
        layernorm_backward_row(h_last.row(t), d_final_normed.row(t), model.lnf_gain.data(), d,
                               cache.lnf_mean.at(t), cache.lnf_rstd.at(t), dh.row(t),
                               weight_grads ? weight_grads->lnf_gain.data() : nullptr,
                               weight_grads ? weight_grads->lnf_bias.data() : nullptr);

    std::vector<double> dp(static_cast<size_t>(z));
    std::vector<double> dscore(static_cast<size_t>(z));

    for (int64_t l = model.config.n_layers; l >= 1; --l) {
        const LayerWeights& w = model.layers[static_cast<size_t>(l - 1)];
        const LayerCache& lc = cache.layers[static_cast<size_t>(l - 1)];
        LayerWeights* wg = weight_grads ? &weight_grads->layers[static_cast<size_t>(l - 1)] : nullptr;

        // h^l = h^{l-1} + a^l + m^l: dh feeds the residual and both branches
        const Tensor& dout = dh;

        if (delta_grads) {
            for (size_t i = 0; i < cache.injections.size(); ++i) {
                const Injection& inj = cache.injections[i];
                if (inj.layer != l) continue;
                if (inj.delta_a)
                    detail::axpy_n(delta_grads->delta_a[i].data(), 1.0, dout.row(inj.position), d);
                if (inj.delta_m)
                    detail::axpy_n(delta_grads->delta_m[i].data(), 1.0, dout.row(inj.position), d);
            }
        }

        Tensor d_normed = Tensor::matrix(z, d);

        // FFN branch: m = gelu(normed·wiᵀ)·wo_ffnᵀ
        {
            Tensor d_act = matmul(dout, w.wo_ffn);  // [z×dff]
            if (wg) addmm_tn(wg->wo_ffn, dout, lc.ffn_act);
            for (int64_t i = 0; i < d_act.size(); ++i)
                d_act.at(i) *= gelu_grad(lc.ffn_pre.at(i));
            if (wg) addmm_tn(wg->wi, d_act, lc.normed);
            addmm_nn(d_normed, d_act, w.wi);
        }

        // MHSA branch: a = concat·wo_attnᵀ
        {
            Tensor d_concat = matmul(dout, w.wo_attn);  // [z×d]
            if (wg) addmm_tn(wg->wo_attn, dout, lc.attn_concat);

            Tensor dq = Tensor::matrix(z, d);
            Tensor dk = Tensor::matrix(z, d);
            Tensor dv = Tensor::matrix(z, d);
            for (int64_t head = 0; head < nh; ++head) {
                const Tensor& probs = lc.attn_probs[static_cast<size_t>(head)];
                const int64_t off = head * hd;
                for (int64_t t = 0; t < z; ++t) {
                    const double* dco = d_concat.row(t) + off;
                    double dp_dot_p = 0.0;
                    for (int64_t s = 0; s <= t; ++s) {
                        const double p = probs.at(t, s);
                        dp[static_cast<size_t>(s)] = detail::dot_n(dco, lc.v.row(s) + off, hd);
                        detail::axpy_n(dv.row(s) + off, p, dco, hd);
                        dp_dot_p += p * dp[static_cast<size_t>(s)];
                    }
                    for (int64_t s = 0; s <= t; ++s)
                        dscore[static_cast<size_t>(s)] =
                            probs.at(t, s) * (dp[static_cast<size_t>(s)] - dp_dot_p);
                    double* dqrow = dq.row(t) + off;
                    const double* qrow = lc.q.row(t) + off;
                    for (int64_t s = 0; s <= t; ++s) {
                        const double g = dscore[static_cast<size_t>(s)] * att_scale;
                        detail::axpy_n(dqrow, g, lc.k.row(s) + off, hd);
                        detail::axpy_n(dk.row(s) + off, g, qrow, hd);
                    }
                }
            }
            if (wg) {
                addmm_tn(wg->wq, dq, lc.normed);
                addmm_tn(wg->wk, dk, lc.normed);
                addmm_tn(wg->wv, dv, lc.normed);
            }
            addmm_nn(d_normed, dq, w.wq);
            addmm_nn(d_normed, dk, w.wk);
            addmm_nn(d_normed, dv, w.wv);
        }

        // shared pre-layernorm, then fold into the residual path
        Tensor dh_prev = dh;  // residual branch passes dh through unchanged
        for (int64_t t = 0; t < z; ++t)
            layernorm_backward_row(lc.input.row(t), d_normed.row(t), w.ln_gain.data(), d,
                                   lc.ln_mean.at(t), lc.ln_rstd.at(t), dh_prev.row(t),
                                   wg ? wg->ln_gain.data() : nullptr,
                                   wg ? wg->ln_bias.data() : nullptr);
        dh = std::move(dh_prev);
    }

    if (weight_grads) {
        for (int64_t t = 0; t < z; ++t) {
            detail::axpy_n(weight_grads->tok_emb.row(cache.tokens[static_cast<size_t>(t)]), 1.0,
                           dh.row(t), d);
            detail::axpy_n(weight_grads->pos_emb.row(t), 1.0, dh.row(t), d);
        }
    }
}

}  // namespace pmetlab
