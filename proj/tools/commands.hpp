#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Invalid configuration surfaced at the command boundary; maps to exit 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fields shared by every command, filled by main() after parsing.
struct CommonArgs {
    std::string out;                        // output directory
    std::vector<std::string> config_files;  // --config paths, manifest provenance
    int64_t thread_bound = 1;               // PMETLAB_THREADS (upper bound)
};

struct GenCorpusArgs : CommonArgs {
    int64_t subjects = 50;
    int64_t relations = 5;
    int64_t paraphrases = 2;
    int64_t neighbors = 3;
    uint64_t seed = 1;
};

struct TrainArgs : CommonArgs {
    std::string data;  // directory holding corpus.jsonl, vocab.txt, train.txt
    bool force = false;
    int64_t layers = 4;
    int64_t d_model = 64;
    int64_t d_ff = 256;
    int64_t heads = 4;
    int64_t max_seq = 64;
    uint64_t model_seed = 3;
    int64_t epochs = 60;
    int64_t batch = 25;
    double lr = 3e-3;
    uint64_t train_seed = 7;
    double target_mem = 0.95;
};

struct EditArgs : CommonArgs {
    std::string model;     // base checkpoint
    std::string requests;  // corpus JSONL; records with target_new become edits
    std::string cov_data;  // text file sampled for the key covariance
    int64_t n_requests = 20;
    std::vector<int64_t> critical_layers{2, 3};
    double lambda = 2000.0;
    double phi = 1.0;
    double mu = 1.0;
    double phase2_phi = 0.1;
    double kl_stop = 0.01;
    int64_t steps = 30;
    double opt_lr = 0.2;
    double clamp = 0.75;
    int64_t prefixes = 4;
    int64_t cov_samples = 2000;
    std::string spread = "sqrt";
    bool no_delta_a = false;
    bool edit_mhsa = false;
    uint64_t seed = 99;
};

struct EvalArgs : CommonArgs {
    std::string model;
    std::string requests;
    std::string baseline;  // optional pre-edit checkpoint for a paired row
    int64_t n_requests = 20;
    int64_t n_new = 20;
};

struct AnalyzeArgs : CommonArgs {
    std::string model;    // required with --prompts
    std::string prompts;  // text file, one prompt per line
    std::vector<std::string> reports;  // LABEL=report.json pairs
    int64_t k = 50;
};

struct AblateArgs : CommonArgs {
    std::string model;
    std::string requests;
    std::string cov_data;
    int64_t n_requests = 10;
    std::vector<uint64_t> seeds{99, 100, 101};
    int64_t n_new = 8;
    // shared EditConfig knobs; per-mode overrides applied on top
    std::vector<int64_t> critical_layers{2, 3};
    double lambda = 2000.0;
    int64_t steps = 30;
    int64_t cov_samples = 2000;
};

int run_gen_corpus(const GenCorpusArgs& args);
int run_train(const TrainArgs& args);
int run_edit(const EditArgs& args);
int run_eval(const EvalArgs& args);
int run_analyze(const AnalyzeArgs& args);
int run_ablate(const AblateArgs& args);
