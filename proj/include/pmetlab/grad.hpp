#pragma once

#include <string>
#include <vector>

#include "pmetlab/model.hpp"

namespace pmetlab {

struct GradError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything the delta loss needs about one edit request: the P prefixed
// clue sequences with target tokens appended, the injection layer and
// per-sequence subject-last positions, the KL probe sequence, and the
// cached base next-token distribution at its last position.
struct RequestContext {
    int64_t inject_layer = 0;
    std::vector<std::vector<int32_t>> seqs;  // bos + prefix ⊕ clue ⊕ target
    std::vector<int64_t> inject_pos;         // subject-last token per sequence
    std::vector<int64_t> target_begin;       // index of first target token per sequence
    std::vector<int32_t> kl_tokens;          // bos + "{subject} is a"
    int64_t kl_inject_pos = 0;
    Tensor base_kl;                          // [V], frozen before optimization
};

RequestContext build_request_context(const ToyTransformer& model, const std::string& clue,
                                     const std::string& subject, const std::string& target,
                                     const std::vector<std::string>& prefixes, int64_t layer);

struct DeltaGradients {
    Tensor grad_delta_a;  // [d]
    Tensor grad_delta_m;  // [d]
    double loss_value = 0.0;
    double nll_term = 0.0;  // mean over prefixes of summed target-token NLL
    double kl_term = 0.0;
};

// loss = φ·nll_term + μ·kl_term, gradients w.r.t. the injected deltas.
// Model weights are constants. Throws GradError carrying the offending
// term if the loss is non-finite.
DeltaGradients loss_and_grads(const ToyTransformer& model, const RequestContext& ctx,
                              const Tensor& delta_a, const Tensor& delta_m, double phi, double mu);

// Max over all delta coordinates of |analytic − central difference| /
// max(|analytic|, 1e-8). step must lie in (0, 1e-2].
double finite_diff_check(const ToyTransformer& model, const RequestContext& ctx,
                         const Tensor& delta_a, const Tensor& delta_m, double step, double phi,
                         double mu);

}  // namespace pmetlab
