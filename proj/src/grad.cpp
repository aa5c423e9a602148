#include "pmetlab/grad.hpp"

#include <cmath>

#include "pmetlab/backprop.hpp"

namespace pmetlab {

RequestContext build_request_context(const ToyTransformer& model, const std::string& clue,
                                     const std::string& subject, const std::string& target,
                                     const std::vector<std::string>& prefixes, int64_t layer) {
    if (layer < 1 || layer > model.config.n_layers)
        throw GradError("request context: layer " + std::to_string(layer) + " out of range");
    if (prefixes.empty()) throw GradError("request context: need at least one prefix");
    if (clue.find(subject) == std::string::npos)
        throw GradError("request context: clue '" + clue + "' does not contain subject '" +
                        subject + "'");

    const std::vector<int32_t> target_ids = model.encode(target);
    if (target_ids.empty()) throw GradError("request context: empty target");
    for (int32_t id : target_ids)
        if (id == kUnkId)
            throw GradError("request context: target '" + target + "' contains unknown token");

    RequestContext ctx;
    ctx.inject_layer = layer;
    for (const std::string& prefix : prefixes) {
        const std::string text = prefix.empty() ? clue : prefix + " " + clue;
        std::vector<int32_t> seq = model.encode_with_bos(text);
        ctx.inject_pos.push_back(subject_last_position(model, seq, subject));
        ctx.target_begin.push_back(static_cast<int64_t>(seq.size()));
        for (int32_t id : target_ids) seq.push_back(id);
        if (static_cast<int64_t>(seq.size()) > model.config.max_seq_len)
            throw GradError("request context: prefixed sequence exceeds max_seq_len");
        ctx.seqs.push_back(std::move(seq));
    }

    ctx.kl_tokens = model.encode_with_bos(subject + " is a");
    ctx.kl_inject_pos = subject_last_position(model, ctx.kl_tokens, subject);
    ctx.base_kl = next_token_distribution(model, ctx.kl_tokens);
    return ctx;
}

namespace {

void check_delta(const ToyTransformer& model, const Tensor& t, const char* name) {
    if (t.rank() != 1 || t.size() != model.config.d_model)
        throw GradError(std::string(name) + " must be rank-1 of dim d_model");
}

struct Evaluation {
    double nll_term = 0.0;
    double kl_term = 0.0;
    Tensor grad_a, grad_m;
};

Evaluation evaluate(const ToyTransformer& model, const RequestContext& ctx, const Tensor& delta_a,
                    const Tensor& delta_m, double phi, double mu, bool want_grads) {
    const int64_t v = model.config.vocab_size;
    const int64_t p_count = static_cast<int64_t>(ctx.seqs.size());
    if (p_count == 0) throw GradError("request context has no sequences");

    Evaluation ev;
    ev.grad_a = Tensor::vector(model.config.d_model);
    ev.grad_m = Tensor::vector(model.config.d_model);

    std::vector<double> logp(static_cast<size_t>(v));

    for (int64_t j = 0; j < p_count; ++j) {
        const auto& seq = ctx.seqs[static_cast<size_t>(j)];
        const int64_t z = static_cast<int64_t>(seq.size());
        const int64_t begin = ctx.target_begin[static_cast<size_t>(j)];
        if (begin < 1 || begin >= z)
            throw GradError("request context: bad target begin for sequence " + std::to_string(j));

        Injection inj{ctx.inject_layer, ctx.inject_pos[static_cast<size_t>(j)], delta_a, delta_m};
        ForwardCache cache = forward_cached(model, seq, std::span<const Injection>(&inj, 1));

        double nll = 0.0;
        Tensor dlogits = Tensor::matrix(z, v);
        const double w = phi / static_cast<double>(p_count);
        for (int64_t t = begin - 1; t < z - 1; ++t) {
            const int32_t next = seq[static_cast<size_t>(t + 1)];
            detail::log_softmax_row(cache.logits.row(t), v, logp.data());
            nll -= logp[static_cast<size_t>(next)];
            if (want_grads && phi != 0.0) {
                double* drow = dlogits.row(t);
                for (int64_t k = 0; k < v; ++k) drow[k] = std::exp(logp[static_cast<size_t>(k)]) * w;
                drow[next] -= w;
            }
        }
        ev.nll_term += nll / static_cast<double>(p_count);

        if (want_grads && phi != 0.0) {
            DeltaGradSlots slots = DeltaGradSlots::zeros_for(cache, model.config.d_model);
            backward(model, cache, dlogits, nullptr, &slots);
            add_inplace(ev.grad_a, slots.delta_a[0]);
            add_inplace(ev.grad_m, slots.delta_m[0]);
        }
    }

    {
        Injection inj{ctx.inject_layer, ctx.kl_inject_pos, delta_a, delta_m};
        ForwardCache cache = forward_cached(model, ctx.kl_tokens, std::span<const Injection>(&inj, 1));
        const int64_t last = static_cast<int64_t>(ctx.kl_tokens.size()) - 1;
        detail::log_softmax_row(cache.logits.row(last), v, logp.data());

        double kl = 0.0;
        for (int64_t k = 0; k < v; ++k) {
            const double pk = std::exp(logp[static_cast<size_t>(k)]);
            const double lq = std::log(ctx.base_kl.at(k));
            kl += pk * (logp[static_cast<size_t>(k)] - lq);
        }
        ev.kl_term = kl;

        if (want_grads && mu != 0.0) {
            Tensor dlogits = Tensor::matrix(static_cast<int64_t>(ctx.kl_tokens.size()), v);
            double* drow = dlogits.row(last);
            for (int64_t k = 0; k < v; ++k) {
                const double pk = std::exp(logp[static_cast<size_t>(k)]);
                const double lq = std::log(ctx.base_kl.at(k));
                drow[k] = mu * pk * ((logp[static_cast<size_t>(k)] - lq) - kl);
            }
            DeltaGradSlots slots = DeltaGradSlots::zeros_for(cache, model.config.d_model);
            backward(model, cache, dlogits, nullptr, &slots);
            add_inplace(ev.grad_a, slots.delta_a[0]);
            add_inplace(ev.grad_m, slots.delta_m[0]);
        }
    }
    return ev;
}

}  // namespace

DeltaGradients loss_and_grads(const ToyTransformer& model, const RequestContext& ctx,
                              const Tensor& delta_a, const Tensor& delta_m, double phi, double mu) {
    check_delta(model, delta_a, "delta_a");
    check_delta(model, delta_m, "delta_m");
    if (ctx.base_kl.size() != model.config.vocab_size)
        throw GradError("request context: base distribution size mismatch");

    Evaluation ev = evaluate(model, ctx, delta_a, delta_m, phi, mu, true);

    DeltaGradients out;
    out.nll_term = ev.nll_term;
    out.kl_term = ev.kl_term;
    out.loss_value = phi * ev.nll_term + mu * ev.kl_term;
    out.grad_delta_a = std::move(ev.grad_a);
    out.grad_delta_m = std::move(ev.grad_m);

    if (!std::isfinite(out.nll_term))
        throw GradError("loss non-finite: nll_term = " + std::to_string(out.nll_term));
    if (!std::isfinite(out.kl_term))
        throw GradError("loss non-finite: kl_term = " + std::to_string(out.kl_term));
    assert_all_finite(out.grad_delta_a, "grad_delta_a");
    assert_all_finite(out.grad_delta_m, "grad_delta_m");
    return out;
}

double finite_diff_check(const ToyTransformer& model, const RequestContext& ctx,
                         const Tensor& delta_a, const Tensor& delta_m, double step, double phi,
                         double mu) {
    if (!(step > 0.0) || step > 1e-2)
        throw GradError("finite_diff_check: step must lie in (0, 1e-2], got " +
                        std::to_string(step));
    check_delta(model, delta_a, "delta_a");
    check_delta(model, delta_m, "delta_m");

    const DeltaGradients analytic = loss_and_grads(model, ctx, delta_a, delta_m, phi, mu);

    auto loss_at = [&](const Tensor& da, const Tensor& dm) {
        Evaluation ev = evaluate(model, ctx, da, dm, phi, mu, false);
        return phi * ev.nll_term + mu * ev.kl_term;
    };

    double worst = 0.0;
    for (int which = 0; which < 2; ++which) {
        const Tensor& grad = which == 0 ? analytic.grad_delta_a : analytic.grad_delta_m;
        for (int64_t i = 0; i < model.config.d_model; ++i) {
            Tensor da = delta_a, dm = delta_m;
            Tensor& perturbed = which == 0 ? da : dm;
            perturbed.at(i) += step;
            const double up = loss_at(da, dm);
            perturbed.at(i) -= 2.0 * step;
            const double down = loss_at(da, dm);
            const double fd = (up - down) / (2.0 * step);
            const double rel = std::abs(grad.at(i) - fd) / std::max(std::abs(grad.at(i)), 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace pmetlab
