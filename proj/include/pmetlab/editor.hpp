#pragma once

#include <string>
#include <vector>

#include "pmetlab/corpus.hpp"
#include "pmetlab/model.hpp"

namespace pmetlab {

struct EditReport;

struct EditError : std::runtime_error {
    explicit EditError(const std::string& msg) : std::runtime_error(msg) {}
    EditError(const std::string& msg, std::vector<std::string> completed)
        : std::runtime_error(msg), completed_steps(std::move(completed)) {}
    // progress notes for the steps that finished before the failure
    std::vector<std::string> completed_steps;
};

enum class SpreadMode { sqrt_decay, even };
enum class WeightKind { ffn, mhsa };

std::string to_string(SpreadMode mode);
std::string to_string(WeightKind kind);
SpreadMode spread_mode_from_string(const std::string& s);

struct EditConfig {
    std::vector<int64_t> critical_layers{2, 3};  // ascending, 1-based
    double lambda = 2000.0;
    double phi = 1.0;
    double mu = 1.0;
    double phase2_phi = 0.1;
    double kl_stop = 0.01;
    int64_t opt_steps = 30;
    double opt_lr = 0.2;
    double clamp_ratio = 0.75;
    int64_t n_prefixes = 4;
    int64_t covariance_samples = 2000;
    SpreadMode spread_mode = SpreadMode::sqrt_decay;
    bool optimize_delta_a = true;      // false = the "without delta_a" ablation
    bool update_mhsa_weights = false;  // true = the "also edit W_O^MHSA" ablation
    uint64_t seed = 99;

    void validate(int64_t n_layers) const;  // throws EditError
};

struct OptStepRecord {
    double loss = 0.0;
    double nll = 0.0;
    double kl = 0.0;
};

struct TargetValues {
    Tensor v_m;            // m_base + delta_m_final, the FFN target value at layer L
    Tensor delta_a_final;  // zero vector when optimize_delta_a is false
    Tensor delta_m_final;
    Tensor m_base;         // frozen base FFN component state at (L, subject-last)
    Tensor a_base;         // frozen base MHSA component state at (L, subject-last)
    std::vector<OptStepRecord> opt_trace;
};

struct CovarianceEstimate {
    int64_t layer = 0;
    WeightKind weight_kind = WeightKind::ffn;
    Tensor c0;  // [key_dim × key_dim], lambda · mean of k·kᵀ
    int64_t n_samples = 0;
    double lambda_used = 0.0;
};

struct EditLayerRow {
    int64_t layer = 0;
    std::string weight_kind;
    double delta_frobenius = 0.0;
    double residual_norm_before = 0.0;  // ‖V − current states‖_F at layer L
    double residual_norm_after = 0.0;
};

struct EditReport {
    std::vector<EditLayerRow> rows;
    double total_delta_norm = 0.0;  // sum of per-row Frobenius norms
    int64_t n_requests = 0;
    EditConfig config;
};

// {empty} plus (n-1) deterministic greedy continuations of random corpus
// tokens, 6 words each.
std::vector<std::string> build_prefixes(const ToyTransformer& model, int64_t n, uint64_t seed);

// Gradient descent on (δᵃ, δᵐ) injected at (L = max critical layer,
// subject-last) against the frozen model: loss = φ·NLL(target) + μ·KL at
// the "{subject} is a" probe. Two-phase φ schedule, per-step norm clamps.
TargetValues optimize_target_values(const ToyTransformer& model, const KnowledgeRecord& request,
                                    const EditConfig& config,
                                    const std::vector<std::string>& prefixes);

// Mean over prefixes of the pre-weight hidden state at the subject's last
// token, under the model as passed (possibly mid-edit).
Tensor compute_keys(const ToyTransformer& model, const std::string& subject,
                    const std::vector<std::string>& prefixes, int64_t layer, WeightKind kind);

// λ · (1/n) Σ k·kᵀ over key states at seeded random token positions of the
// sample texts. Symmetric by construction.
CovarianceEstimate estimate_covariance(const ToyTransformer& model,
                                       const std::vector<std::string>& sample_texts, int64_t layer,
                                       WeightKind kind, double lambda, int64_t n_samples,
                                       uint64_t seed);

// (v − m) / sqrt(L − l + 1) in sqrt mode, (v − m) / (L − l + 1) in even mode.
Tensor spread_residual(const Tensor& v, const Tensor& m, int64_t layer, int64_t last_layer,
                       SpreadMode mode);

// Δ = R·K₁ᵀ·(C₀ + K₁·K₁ᵀ)⁻¹ via the transposed SPD solve, with one diagonal
// jitter retry (1e-8·trace/d) if the factorization fails.
Tensor compute_delta(const Tensor& residual, const Tensor& k1, const Tensor& c0);

struct EditOutcome {
    ToyTransformer model;
    EditReport report;
    std::vector<TargetValues> targets;
};

// Full PMET run: optimize per-request targets against the frozen base model,
// then walk the critical layers in ascending order, each time recomputing
// keys and current layer-L states under the partially edited model and
// adding the closed-form Δ to W_O^FFN (and W_O^MHSA when enabled).
EditOutcome apply_edits(const ToyTransformer& model, const std::vector<KnowledgeRecord>& requests,
                        const EditConfig& config, const std::vector<std::string>& cov_sample_texts);

void write_edit_report_json(const std::string& path, const EditReport& report);
void write_edit_report_csv(const std::string& path, const EditReport& report);

// Reads back the row data of a report JSON (rows, total norm, request count).
// The config echo is not restored.
EditReport read_edit_report_json(const std::string& path);

}  // namespace pmetlab
