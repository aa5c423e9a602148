#include "pmetlab/editor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "pmetlab/grad.hpp"
#include "pmetlab/rng.hpp"

namespace pmetlab {

std::string to_string(SpreadMode mode) {
    return mode == SpreadMode::sqrt_decay ? "sqrt" : "even";
}

std::string to_string(WeightKind kind) { return kind == WeightKind::ffn ? "ffn" : "mhsa"; }

SpreadMode spread_mode_from_string(const std::string& s) {
    if (s == "sqrt") return SpreadMode::sqrt_decay;
    if (s == "even") return SpreadMode::even;
    throw EditError("unknown spread mode '" + s + "' (expected sqrt or even)");
}

void EditConfig::validate(int64_t n_layers) const {
    if (critical_layers.empty()) throw EditError("edit config: critical_layers must be non-empty");
    for (size_t i = 0; i < critical_layers.size(); ++i) {
        if (critical_layers[i] < 1 || critical_layers[i] > n_layers)
            throw EditError("edit config: critical layer " + std::to_string(critical_layers[i]) +
                            " out of range [1.." + std::to_string(n_layers) + "]");
        if (i > 0 && critical_layers[i] <= critical_layers[i - 1])
            throw EditError("edit config: critical_layers must be strictly ascending");
    }
    if (!(lambda > 0.0)) throw EditError("edit config: lambda must be > 0");
    if (!(phi > 0.0)) throw EditError("edit config: phi must be > 0");
    if (mu < 0.0 || mu > 1.0) throw EditError("edit config: mu must lie in [0, 1]");
    if (!(phase2_phi > 0.0)) throw EditError("edit config: phase2_phi must be > 0");
    if (!(kl_stop > 0.0)) throw EditError("edit config: kl_stop must be > 0");
    if (opt_steps < 0) throw EditError("edit config: opt_steps must be >= 0");
    if (!(opt_lr > 0.0)) throw EditError("edit config: opt_lr must be > 0");
    if (!(clamp_ratio > 0.0) || clamp_ratio > 1.0)
        throw EditError("edit config: clamp_ratio must lie in (0, 1]");
    if (n_prefixes < 1) throw EditError("edit config: n_prefixes must be >= 1");
    if (covariance_samples < 1) throw EditError("edit config: covariance_samples must be >= 1");
}

std::vector<std::string> build_prefixes(const ToyTransformer& model, int64_t n, uint64_t seed) {
    if (n < 1) throw EditError("build_prefixes: n must be >= 1");
    std::vector<std::string> prefixes{""};
    Rng rng(seed);
    for (int64_t i = 1; i < n; ++i) {
        const int32_t start =
            static_cast<int32_t>(4 + rng.below(static_cast<uint64_t>(model.config.vocab_size - 4)));
        const std::vector<int32_t> prompt{kBosId, start};
        const std::vector<int32_t> gen = greedy_generate(model, prompt, 5);
        prefixes.push_back(model.decode(std::span<const int32_t>(gen).subspan(1)));
    }
    return prefixes;
}

namespace {

void clamp_norm(Tensor& delta, double bound) {
    const double n = norm2(delta);
    if (n > bound) {
        const double s = bound / n;
        for (int64_t i = 0; i < delta.size(); ++i) delta.at(i) *= s;
    }
}

// bias-corrected Adam step on a delta vector
struct AdamState {
    Tensor m;
    Tensor v;
    int64_t t = 0;
};

void adam_step(Tensor& x, const Tensor& grad, AdamState& s, double lr) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    ++s.t;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(s.t));
    for (int64_t i = 0; i < x.size(); ++i) {
        const double g = grad.at(i);
        s.m.at(i) = kBeta1 * s.m.at(i) + (1.0 - kBeta1) * g;
        s.v.at(i) = kBeta2 * s.v.at(i) + (1.0 - kBeta2) * g * g;
        x.at(i) -= lr * (s.m.at(i) / c1) / (std::sqrt(s.v.at(i) / c2) + kEps);
    }
}

// Prefix-mean TC hidden states at (layer, subject-last). Since each component
// output is its output matrix applied to the key state, the mean over the
// prefixed renderings is exactly W₀·k̄, the realized W₀K₁ of the closed-form
// residual; templates put the subject first, so by causality these states are
// identical whether the rendering stops at the subject or carries the full
// prompt.
struct ComponentMeans {
    Tensor m;  // [d]
    Tensor a;  // [d]
};

ComponentMeans mean_component_states(const ToyTransformer& model, const std::string& subject,
                                     const std::vector<std::string>& prefixes, int64_t layer) {
    if (prefixes.empty()) throw EditError("mean_component_states: no prefixes");
    const int64_t d = model.config.d_model;
    ComponentMeans out{Tensor::vector(d), Tensor::vector(d)};
    for (const std::string& prefix : prefixes) {
        const std::string text = prefix.empty() ? subject : prefix + " " + subject;
        const std::vector<int32_t> seq = model.encode_with_bos(text);
        const int64_t pos = static_cast<int64_t>(seq.size()) - 1;
        ForwardCache cache = forward_cached(model, seq);
        const LayerCache& lc = cache.layers[static_cast<size_t>(layer - 1)];
        for (int64_t i = 0; i < d; ++i) {
            out.m.at(i) += lc.ffn_out.at(pos, i);
            out.a.at(i) += lc.attn_out.at(pos, i);
        }
    }
    const double inv = 1.0 / static_cast<double>(prefixes.size());
    for (int64_t i = 0; i < d; ++i) {
        out.m.at(i) *= inv;
        out.a.at(i) *= inv;
    }
    return out;
}

}  // namespace

TargetValues optimize_target_values(const ToyTransformer& model, const KnowledgeRecord& request,
                                    const EditConfig& config,
                                    const std::vector<std::string>& prefixes) {
    config.validate(model.config.n_layers);
    if (!request.target_new)
        throw EditError("optimize_target_values: request for subject '" + request.subject +
                        "' has no target_new");
    if (prefixes.empty()) throw EditError("optimize_target_values: no prefixes");

    const int64_t last_layer = config.critical_layers.back();
    const int64_t d = model.config.d_model;

    TargetValues tv;
    ComponentMeans base = mean_component_states(model, request.subject, prefixes, last_layer);
    tv.m_base = std::move(base.m);
    tv.a_base = std::move(base.a);
    const double m_norm = norm2(tv.m_base);
    const double a_norm = norm2(tv.a_base);
    if (m_norm == 0.0)
        throw EditError("optimize_target_values: zero-norm base FFN state (degenerate)");
    if (config.optimize_delta_a && a_norm == 0.0)
        throw EditError("optimize_target_values: zero-norm base MHSA state (degenerate)");

    RequestContext ctx;
    try {
        ctx = build_request_context(model, request.clue, request.subject, *request.target_new,
                                    prefixes, last_layer);
    } catch (const GradError& e) {
        throw EditError(std::string("optimize_target_values: ") + e.what());
    }
    const int64_t target_len = static_cast<int64_t>(model.encode(*request.target_new).size());

    Tensor delta_a = Tensor::vector(d);
    Tensor delta_m = Tensor::vector(d);
    AdamState adam_m{Tensor::vector(d), Tensor::vector(d), 0};
    AdamState adam_a{Tensor::vector(d), Tensor::vector(d), 0};
    const int64_t switch_step =
        static_cast<int64_t>(std::ceil(0.6 * static_cast<double>(config.opt_steps)));
    bool phase2 = false;

    for (int64_t step = 0; step < config.opt_steps; ++step) {
        const double phi_eff = phase2 ? config.phase2_phi : config.phi;
        const DeltaGradients g = loss_and_grads(model, ctx, delta_a, delta_m, phi_eff, config.mu);
        tv.opt_trace.push_back({g.loss_value, g.nll_term, g.kl_term});

        if (phase2 && g.kl_term < config.kl_stop) break;
        const double per_token_nll = g.nll_term / static_cast<double>(target_len);
        if (!phase2 && (per_token_nll <= 0.05 || step + 1 >= switch_step)) phase2 = true;

        adam_step(delta_m, g.grad_delta_m, adam_m, config.opt_lr);
        clamp_norm(delta_m, config.clamp_ratio * m_norm);
        if (config.optimize_delta_a) {
            adam_step(delta_a, g.grad_delta_a, adam_a, config.opt_lr);
            clamp_norm(delta_a, config.clamp_ratio * a_norm);
        }
    }

    tv.delta_a_final = std::move(delta_a);
    tv.delta_m_final = std::move(delta_m);
    tv.v_m = add(tv.m_base, tv.delta_m_final);
    return tv;
}

Tensor compute_keys(const ToyTransformer& model, const std::string& subject,
                    const std::vector<std::string>& prefixes, int64_t layer, WeightKind kind) {
    if (prefixes.empty()) throw EditError("compute_keys: no prefixes");
    if (model.encode(subject).empty()) throw EditError("compute_keys: subject tokenizes empty");

    const int64_t key_dim = kind == WeightKind::ffn ? model.config.d_ff : model.config.d_model;
    Tensor mean = Tensor::vector(key_dim);
    for (const std::string& prefix : prefixes) {
        const std::string text = prefix.empty() ? subject : prefix + " " + subject;
        const std::vector<int32_t> seq = model.encode_with_bos(text);
        const int64_t pos = static_cast<int64_t>(seq.size()) - 1;
        const Tensor k = kind == WeightKind::ffn ? ffn_key_state(model, seq, layer, pos)
                                                 : mhsa_key_state(model, seq, layer, pos);
        add_inplace(mean, k);
    }
    return scale(mean, 1.0 / static_cast<double>(prefixes.size()));
}

CovarianceEstimate estimate_covariance(const ToyTransformer& model,
                                       const std::vector<std::string>& sample_texts, int64_t layer,
                                       WeightKind kind, double lambda, int64_t n_samples,
                                       uint64_t seed) {
    if (sample_texts.empty()) throw EditError("estimate_covariance: empty sample set");
    if (n_samples < 1) throw EditError("estimate_covariance: n_samples must be >= 1");
    if (lambda < 0.0) throw EditError("estimate_covariance: lambda must be >= 0");
    if (layer < 1 || layer > model.config.n_layers)
        throw EditError("estimate_covariance: layer out of range");

    const int64_t key_dim = kind == WeightKind::ffn ? model.config.d_ff : model.config.d_model;
    if (n_samples < key_dim)
        std::cerr << "warning: covariance for layer " << layer << " (" << to_string(kind)
                  << ") uses " << n_samples << " samples < key dim " << key_dim << "\n";

    // draw (text, position) pairs, then group by text so each text is
    // encoded and run once; accumulation order stays the draw order
    Rng rng(seed);
    std::vector<std::vector<int32_t>> encoded(sample_texts.size());
    std::vector<std::pair<int64_t, int64_t>> draws;  // (text index, position)
    draws.reserve(static_cast<size_t>(n_samples));
    for (int64_t i = 0; i < n_samples; ++i) {
        const auto ti = static_cast<size_t>(rng.below(sample_texts.size()));
        if (encoded[ti].empty()) {
            encoded[ti] = model.encode_with_bos(sample_texts[ti]);
            if (static_cast<int64_t>(encoded[ti].size()) > model.config.max_seq_len)
                throw EditError("estimate_covariance: sample text exceeds max_seq_len");
        }
        draws.emplace_back(static_cast<int64_t>(ti),
                           static_cast<int64_t>(rng.below(encoded[ti].size())));
    }

    Tensor keys = Tensor::matrix(n_samples, key_dim);
    for (size_t ti = 0; ti < sample_texts.size(); ++ti) {
        bool used = false;
        for (const auto& [t, p] : draws) used = used || t == static_cast<int64_t>(ti);
        if (!used) continue;
        ForwardCache cache = forward_cached(model, encoded[ti]);
        const LayerCache& lc = cache.layers[static_cast<size_t>(layer - 1)];
        const Tensor& src = kind == WeightKind::ffn ? lc.ffn_act : lc.attn_concat;
        for (size_t s = 0; s < draws.size(); ++s) {
            if (draws[s].first != static_cast<int64_t>(ti)) continue;
            const double* row = src.row(draws[s].second);
            double* dst = keys.row(static_cast<int64_t>(s));
            for (int64_t i = 0; i < key_dim; ++i) dst[i] = row[i];
        }
    }

    // upper triangle then mirror, so the result is exactly symmetric
    Tensor c0 = Tensor::matrix(key_dim, key_dim);
    for (int64_t s = 0; s < n_samples; ++s) {
        const double* k = keys.row(s);
        for (int64_t i = 0; i < key_dim; ++i)
            for (int64_t j = i; j < key_dim; ++j) c0.at(i, j) += k[i] * k[j];
    }
    const double s = lambda / static_cast<double>(n_samples);
    for (int64_t i = 0; i < key_dim; ++i)
        for (int64_t j = i; j < key_dim; ++j) {
            c0.at(i, j) *= s;
            c0.at(j, i) = c0.at(i, j);
        }

    CovarianceEstimate est;
    est.layer = layer;
    est.weight_kind = kind;
    est.c0 = std::move(c0);
    est.n_samples = n_samples;
    est.lambda_used = lambda;
    return est;
}

Tensor spread_residual(const Tensor& v, const Tensor& m, int64_t layer, int64_t last_layer,
                       SpreadMode mode) {
    if (!v.same_shape(m))
        throw EditError("spread_residual: shape mismatch " + v.shape_str() + " vs " + m.shape_str());
    if (layer < 1) throw EditError("spread_residual: layer must be >= 1");
    if (layer > last_layer)
        throw EditError("spread_residual: layer " + std::to_string(layer) +
                        " beyond last critical layer " + std::to_string(last_layer));
    const double depth = static_cast<double>(last_layer - layer + 1);
    const double divisor = mode == SpreadMode::sqrt_decay ? std::sqrt(depth) : depth;
    return scale(sub(v, m), 1.0 / divisor);
}

Tensor compute_delta(const Tensor& residual, const Tensor& k1, const Tensor& c0) {
    if (residual.rank() != 2 || k1.rank() != 2)
        throw EditError("compute_delta: residual and K1 must be matrices");
    if (residual.cols() != k1.cols())
        throw EditError("compute_delta: request counts differ, residual " + residual.shape_str() +
                        " vs K1 " + k1.shape_str());
    const int64_t key_dim = k1.rows();
    if (c0.rank() != 2 || c0.rows() != key_dim || c0.cols() != key_dim)
        throw EditError("compute_delta: C0 shape " + c0.shape_str() + " does not match key dim " +
                        std::to_string(key_dim));

    Tensor a = matmul_nt(k1, k1);
    add_inplace(a, c0);
    const Tensor b = matmul_nt(k1, residual);  // K₁·Rᵀ [key_dim × d_out]

    try {
        return transpose(solve_spd(a, b));
    } catch (const TensorError&) {
        double trace = 0.0;
        for (int64_t i = 0; i < key_dim; ++i) trace += a.at(i, i);
        const double jitter = 1e-8 * trace / static_cast<double>(key_dim);
        for (int64_t i = 0; i < key_dim; ++i) a.at(i, i) += jitter;
        try {
            return transpose(solve_spd(a, b));
        } catch (const TensorError& e) {
            throw EditError(std::string("compute_delta: system singular even after jitter: ") +
                            e.what());
        }
    }
}

namespace {

// current prefix-mean states m_i^L / a_i^L of every request under the model
// as it currently stands (the per-iteration W₀K₁ realization)
struct CurrentStates {
    Tensor m;  // [d × u]
    Tensor a;  // [d × u]
};

CurrentStates current_layer_states(const ToyTransformer& model,
                                   const std::vector<KnowledgeRecord>& requests,
                                   const std::vector<std::string>& prefixes, int64_t last_layer) {
    const int64_t d = model.config.d_model;
    const int64_t u = static_cast<int64_t>(requests.size());
    CurrentStates cur{Tensor::matrix(d, u), Tensor::matrix(d, u)};
    for (int64_t i = 0; i < u; ++i) {
        const ComponentMeans means = mean_component_states(
            model, requests[static_cast<size_t>(i)].subject, prefixes, last_layer);
        for (int64_t r = 0; r < d; ++r) {
            cur.m.at(r, i) = means.m.at(r);
            cur.a.at(r, i) = means.a.at(r);
        }
    }
    return cur;
}

}  // namespace

EditOutcome apply_edits(const ToyTransformer& model, const std::vector<KnowledgeRecord>& requests,
                        const EditConfig& config, const std::vector<std::string>& cov_sample_texts) {
    config.validate(model.config.n_layers);
    if (requests.empty()) throw EditError("apply_edits: no requests");

    const int64_t last_layer = config.critical_layers.back();
    const int64_t d = model.config.d_model;
    const int64_t u = static_cast<int64_t>(requests.size());
    std::vector<std::string> progress;

    const std::vector<std::string> prefixes =
        build_prefixes(model, config.n_prefixes, config.seed);

    EditOutcome out;
    out.report.config = config;
    out.report.n_requests = u;

    try {
        for (const KnowledgeRecord& req : requests) {
            out.targets.push_back(optimize_target_values(model, req, config, prefixes));
            progress.push_back("optimized target values for subject " + req.subject);
        }

        // target value matrices, one request per column
        Tensor v_m = Tensor::matrix(d, u);
        Tensor v_a = Tensor::matrix(d, u);
        for (int64_t i = 0; i < u; ++i) {
            const TargetValues& tv = out.targets[static_cast<size_t>(i)];
            for (int64_t r = 0; r < d; ++r) {
                v_m.at(r, i) = tv.v_m.at(r);
                v_a.at(r, i) = tv.a_base.at(r) + tv.delta_a_final.at(r);
            }
        }

        std::vector<WeightKind> kinds{WeightKind::ffn};
        if (config.update_mhsa_weights) kinds.push_back(WeightKind::mhsa);

        // covariances come from the unedited model, one per (layer, kind)
        std::vector<std::vector<CovarianceEstimate>> cov(config.critical_layers.size());
        for (size_t li = 0; li < config.critical_layers.size(); ++li) {
            for (WeightKind kind : kinds) {
                const int64_t layer = config.critical_layers[li];
                const uint64_t cov_seed =
                    config.seed ^ (0x9e3779b97f4a7c15ULL *
                                   static_cast<uint64_t>(layer * 2 + (kind == WeightKind::mhsa)));
                cov[li].push_back(estimate_covariance(model, cov_sample_texts, layer, kind,
                                                      config.lambda, config.covariance_samples,
                                                      cov_seed));
                progress.push_back("covariance for layer " + std::to_string(layer) + " " +
                                   to_string(kind));
            }
        }

        out.model = model;
        for (size_t li = 0; li < config.critical_layers.size(); ++li) {
            const int64_t layer = config.critical_layers[li];
            const CurrentStates cur =
                current_layer_states(out.model, requests, prefixes, last_layer);

            // both kinds read the same pre-update state, then both deltas land
            struct Pending {
                WeightKind kind;
                Tensor delta;
                double before;
            };
            std::vector<Pending> pending;
            for (size_t ki = 0; ki < kinds.size(); ++ki) {
                const WeightKind kind = kinds[ki];
                const Tensor& targets_mat = kind == WeightKind::ffn ? v_m : v_a;
                const Tensor& cur_mat = kind == WeightKind::ffn ? cur.m : cur.a;

                const int64_t key_dim = kind == WeightKind::ffn ? model.config.d_ff : d;
                Tensor k1 = Tensor::matrix(key_dim, u);
                for (int64_t i = 0; i < u; ++i) {
                    const Tensor key = compute_keys(out.model, requests[static_cast<size_t>(i)].subject,
                                                    prefixes, layer, kind);
                    for (int64_t r = 0; r < key_dim; ++r) k1.at(r, i) = key.at(r);
                }

                Tensor residual = Tensor::matrix(d, u);
                for (int64_t i = 0; i < u; ++i) {
                    Tensor vcol = Tensor::vector(d), ccol = Tensor::vector(d);
                    for (int64_t r = 0; r < d; ++r) {
                        vcol.at(r) = targets_mat.at(r, i);
                        ccol.at(r) = cur_mat.at(r, i);
                    }
                    const Tensor spread = spread_residual(vcol, ccol, layer, last_layer,
                                                          config.spread_mode);
                    for (int64_t r = 0; r < d; ++r) residual.at(r, i) = spread.at(r);
                }

                Pending p;
                p.kind = kind;
                p.before = frobenius_norm(sub(targets_mat, cur_mat));
                p.delta = compute_delta(residual, k1, cov[li][ki].c0);
                pending.push_back(std::move(p));
            }

            for (const Pending& p : pending) {
                LayerWeights& w = out.model.layers[static_cast<size_t>(layer - 1)];
                Tensor& target = p.kind == WeightKind::ffn ? w.wo_ffn : w.wo_attn;
                add_inplace(target, p.delta);
            }

            const CurrentStates after =
                current_layer_states(out.model, requests, prefixes, last_layer);
            for (const Pending& p : pending) {
                EditLayerRow row;
                row.layer = layer;
                row.weight_kind = to_string(p.kind);
                row.delta_frobenius = frobenius_norm(p.delta);
                row.residual_norm_before = p.before;
                row.residual_norm_after = frobenius_norm(
                    sub(p.kind == WeightKind::ffn ? v_m : v_a,
                        p.kind == WeightKind::ffn ? after.m : after.a));
                out.report.total_delta_norm += row.delta_frobenius;
                out.report.rows.push_back(std::move(row));
            }
            progress.push_back("updated layer " + std::to_string(layer));
        }
    } catch (const EditError& e) {
        throw EditError(e.what(), progress);
    } catch (const std::exception& e) {
        throw EditError(std::string("apply_edits: ") + e.what(), progress);
    }
    return out;
}

namespace {

nlohmann::json config_to_json(const EditConfig& c) {
    nlohmann::json j;
    j["critical_layers"] = c.critical_layers;
    j["lambda"] = c.lambda;
    j["phi"] = c.phi;
    j["mu"] = c.mu;
    j["phase2_phi"] = c.phase2_phi;
    j["kl_stop"] = c.kl_stop;
    j["opt_steps"] = c.opt_steps;
    j["opt_lr"] = c.opt_lr;
    j["clamp_ratio"] = c.clamp_ratio;
    j["n_prefixes"] = c.n_prefixes;
    j["covariance_samples"] = c.covariance_samples;
    j["spread_mode"] = to_string(c.spread_mode);
    j["optimize_delta_a"] = c.optimize_delta_a;
    j["update_mhsa_weights"] = c.update_mhsa_weights;
    j["seed"] = c.seed;
    return j;
}

}  // namespace

void write_edit_report_json(const std::string& path, const EditReport& report) {
    nlohmann::json j;
    j["n_requests"] = report.n_requests;
    j["total_delta_norm"] = report.total_delta_norm;
    j["config"] = config_to_json(report.config);
    nlohmann::json rows = nlohmann::json::array();
    for (const EditLayerRow& r : report.rows)
        rows.push_back({{"layer", r.layer},
                        {"weight_kind", r.weight_kind},
                        {"delta_frobenius", r.delta_frobenius},
                        {"residual_norm_before", r.residual_norm_before},
                        {"residual_norm_after", r.residual_norm_after}});
    j["layers"] = rows;

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EditError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw EditError("write failed: " + path);
}

EditReport read_edit_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EditError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw EditError("bad report JSON " + path + ": " + e.what());
    }
    EditReport report;
    try {
        report.n_requests = j.at("n_requests").get<int64_t>();
        report.total_delta_norm = j.at("total_delta_norm").get<double>();
        for (const nlohmann::json& row : j.at("layers")) {
            EditLayerRow r;
            r.layer = row.at("layer").get<int64_t>();
            r.weight_kind = row.at("weight_kind").get<std::string>();
            r.delta_frobenius = row.at("delta_frobenius").get<double>();
            r.residual_norm_before = row.at("residual_norm_before").get<double>();
            r.residual_norm_after = row.at("residual_norm_after").get<double>();
            report.rows.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw EditError("bad report JSON " + path + ": " + e.what());
    }
    return report;
}

void write_edit_report_csv(const std::string& path, const EditReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EditError("cannot open for writing: " + path);
    out << "layer,weight_kind,delta_frobenius,residual_norm_before,residual_norm_after\n";
    char buf[160];
    for (const EditLayerRow& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%s,%.12g,%.12g,%.12g",
                      static_cast<long long>(r.layer), r.weight_kind.c_str(), r.delta_frobenius,
                      r.residual_norm_before, r.residual_norm_after);
        out << buf << '\n';
    }
    if (!out) throw EditError("write failed: " + path);
}

}  // namespace pmetlab
