#pragma once

#include <string>
#include <vector>

#include "pmetlab/editor.hpp"
#include "pmetlab/model.hpp"

namespace pmetlab {

struct AnalysisError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct LayerSimilarity {
    int64_t layer = 0;
    double cos_mhsa = 0.0;  // mean cos(h^{l-1}, a^l) at the last token
    double cos_ffn = 0.0;   // mean cos(h^{l-1}, m^l)
    double jac_mhsa = 0.0;  // mean top-k vocab Jaccard
    double jac_ffn = 0.0;
};

struct SimilarityProfile {
    std::vector<LayerSimilarity> layers;
    int64_t k_used = 0;
    int64_t n_prompts = 0;
    int64_t zero_cosine_warnings = 0;  // zero-vector cosines defined as 0.0
};

// Ids of the k largest entries of W_E·γ_f(h), ties to the lowest id,
// returned in descending-logit order.
std::vector<int32_t> top_k_vocab(const ToyTransformer& model, const Tensor& h, int64_t k);

// |A ∩ B| / |A ∪ B| over token-id sets; both empty -> 1.0.
double jaccard(const std::vector<int32_t>& a, const std::vector<int32_t>& b);

// cos(a, b); a zero vector on either side -> 0.0 (callers may count these).
double cosine_similarity(const Tensor& a, const Tensor& b);

// Per-layer similarity of the last token's layer input against each
// component's output, averaged over prompts.
SimilarityProfile similarity_profile(const ToyTransformer& model,
                                     const std::vector<std::string>& prompts, int64_t k = 50);

void write_similarity_csv(const std::string& path, const SimilarityProfile& profile);

// Per-layer and total delta Frobenius norms, one column per labeled report.
// Layer rows ascend; the final row is the total.
std::string delta_norm_comparison(
    const std::vector<std::pair<std::string, EditReport>>& reports);

}  // namespace pmetlab
