#pragma once

#include <string>
#include <vector>

#include "pmetlab/corpus.hpp"
#include "pmetlab/model.hpp"

namespace pmetlab {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EvalConfig {
    int64_t n_new = 20;  // greedy continuation length for fluency/consistency

    void validate() const;
};

struct MetricsResult {
    double efficacy = 0.0;        // percentages
    double generalization = 0.0;
    double specificity = 0.0;
    double score = 0.0;
    double fluency = 0.0;         // bits
    double consistency = 0.0;     // cosine in [0,1]

    int64_t n_efficacy = 0;       // indicator units evaluated
    int64_t n_generalization = 0;
    int64_t n_specificity = 0;
    int64_t skipped_no_target = 0;
    int64_t skipped_no_paraphrase = 0;
    int64_t skipped_no_neighborhood = 0;

    std::vector<uint8_t> efficacy_pass;                      // per eligible record
    std::vector<std::vector<uint8_t>> generalization_pass;   // per record, per paraphrase
    std::vector<std::vector<uint8_t>> specificity_pass;      // per record, per neighbor
};

// Eq.-14 style indicator at the clue: P(target_new) > P(original_object),
// strict, ties fail. Mean over records carrying target_new, ×100.
double efficacy(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records);

// Same indicator over every paraphrase prompt of eligible records.
double generalization(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records);

// Reversed indicator over neighborhood prompts: the neighbor's own answer
// must beat the record's target_new.
double specificity(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records);

// Harmonic mean 3/(1/e + 1/g + 1/s); any zero input -> 0 with a warning.
double score(double e, double g, double s);

// Mean over prompts of (2/3)·H2 + (4/3)·H3, H_n the Shannon entropy in bits
// of the n-gram distribution of the greedy continuation (n_new tokens).
double fluency(const ToyTransformer& model, const std::vector<std::string>& generation_prompts,
               int64_t n_new);

// Mean TF-IDF unigram cosine between each generation-prompt continuation and
// the record's reference sentences (about target_new when present, else the
// original object). IDF is taken over all reference and generated documents
// of the call.
double consistency(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records,
                   int64_t n_new);

MetricsResult evaluate_all(const ToyTransformer& model,
                           const std::vector<KnowledgeRecord>& records, const EvalConfig& config);

void write_metrics_json(const std::string& path, const MetricsResult& result);
// Appends "n_edits,efficacy,...,consistency" under a header if absent.
void write_metrics_csv_row(const std::string& path, int64_t n_edits, const MetricsResult& result);

}  // namespace pmetlab
