#pragma once

#include "pmetlab/model.hpp"

namespace pmetlab {

// Gradient accumulators mirroring the model's weight tensors.
struct ModelGrads {
    Tensor tok_emb, pos_emb;
    std::vector<LayerWeights> layers;
    Tensor lnf_gain, lnf_bias;

    static ModelGrads zeros_like(const ToyTransformer& model);
    void zero();
};

// Gradients w.r.t. injected deltas, parallel to cache.injections.
struct DeltaGradSlots {
    std::vector<Tensor> delta_a;  // [d] each
    std::vector<Tensor> delta_m;

    static DeltaGradSlots zeros_for(const ForwardCache& cache, int64_t d_model);
};

// Reverse pass from dlogits [z×V] through the cached forward graph.
// Accumulates into weight_grads and/or delta_grads when non-null; model
// weights are treated as constants when weight_grads is null.
void backward(const ToyTransformer& model, const ForwardCache& cache, const Tensor& dlogits,
              ModelGrads* weight_grads, DeltaGradSlots* delta_grads);

}  // namespace pmetlab
