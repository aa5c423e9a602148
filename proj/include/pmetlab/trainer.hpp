#pragma once

#include <string>
#include <vector>

#include "pmetlab/corpus.hpp"
#include "pmetlab/model.hpp"

namespace pmetlab {

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    int64_t epochs = 60;
    int64_t batch_size = 25;
    double learning_rate = 3e-3;
    uint64_t seed = 7;
    double target_memorization = 0.95;

    void validate() const;  // throws TrainError
};

struct TrainResult {
    std::vector<double> epoch_nll;            // mean NLL per token, per epoch
    std::vector<double> epoch_memorization;   // empty when records not supplied
};

// Next-token training with an AdamW update (β₁=0.9, β₂=0.999, ε=1e-8,
// decoupled weight decay 0.01 on matrices). Mutates the model in place.
// When records are given, stops early once memorization_rate reaches
// config.target_memorization.
TrainResult train(ToyTransformer& model, const std::vector<std::string>& texts,
                  const TrainConfig& config,
                  const std::vector<KnowledgeRecord>* records = nullptr);

// Fraction of records where P(original_object | clue) strictly beats every
// other candidate object of the same relation. Candidate pools are the union
// of original objects, counterfactual targets, and neighborhood answers seen
// per relation. Throws on an empty record list.
double memorization_rate(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records);

void write_history_csv(const std::string& path, const TrainResult& result);

}  // namespace pmetlab
