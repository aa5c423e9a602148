#include "commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "pmetlab/analysis.hpp"
#include "pmetlab/checkpoint.hpp"
#include "pmetlab/corpus.hpp"
#include "pmetlab/editor.hpp"
#include "pmetlab/eval.hpp"
#include "pmetlab/manifest.hpp"
#include "pmetlab/model.hpp"
#include "pmetlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace pmetlab;

namespace {

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

// First n records carrying a counterfactual target, in corpus order.
std::vector<KnowledgeRecord> editable_subset(const std::vector<KnowledgeRecord>& records,
                                             int64_t n) {
    if (n < 0) throw UsageError("request count must be >= 0 (0 = all)");
    std::vector<KnowledgeRecord> subset;
    for (const KnowledgeRecord& rec : records) {
        if (!rec.target_new) continue;
        subset.push_back(rec);
        if (n > 0 && static_cast<int64_t>(subset.size()) == n) break;
    }
    if (subset.empty()) throw std::runtime_error("no records with target_new in the request file");
    if (n > 0 && static_cast<int64_t>(subset.size()) < n)
        throw std::runtime_error("asked for " + std::to_string(n) + " requests but only " +
                                 std::to_string(subset.size()) + " records carry target_new");
    return subset;
}

EditConfig edit_config_from(const EditArgs& a) {
    EditConfig c;
    c.critical_layers = a.critical_layers;
    c.lambda = a.lambda;
    c.phi = a.phi;
    c.mu = a.mu;
    c.phase2_phi = a.phase2_phi;
    c.kl_stop = a.kl_stop;
    c.opt_steps = a.steps;
    c.opt_lr = a.opt_lr;
    c.clamp_ratio = a.clamp;
    c.n_prefixes = a.prefixes;
    c.covariance_samples = a.cov_samples;
    c.spread_mode = spread_mode_from_string(a.spread);
    c.optimize_delta_a = !a.no_delta_a;
    c.update_mhsa_weights = a.edit_mhsa;
    c.seed = a.seed;
    return c;
}

}  // namespace

int run_gen_corpus(const GenCorpusArgs& args) {
    CorpusConfig config;
    config.n_subjects = args.subjects;
    config.n_relations = args.relations;
    config.paraphrases_per_fact = args.paraphrases;
    config.neighbors_per_fact = args.neighbors;
    config.seed = args.seed;
    try {
        config.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }

    fs::create_directories(args.out);
    const Corpus corpus = generate_corpus(config);
    const fs::path out(args.out);
    save_jsonl(corpus.records, join(out, "corpus.jsonl"));
    save_vocab(corpus.vocab, join(out, "vocab.txt"));
    save_lines(corpus.training_texts, join(out, "train.txt"));

    RunManifest m;
    m.command = "gen-corpus";
    m.config_files = args.config_files;
    m.seeds["corpus"] = args.seed;
    m.outputs = {"corpus.jsonl", "vocab.txt", "train.txt"};
    m.thread_bound = args.thread_bound;
    write_manifest(args.out, m);

    std::cout << "wrote " << corpus.records.size() << " records, " << corpus.vocab.size()
              << " vocab words, " << corpus.training_texts.size() << " training texts to "
              << args.out << '\n';
    return 0;
}

int run_train(const TrainArgs& args) {
    const fs::path data(args.data);
    const std::string corpus_path = join(data, "corpus.jsonl");
    const std::string vocab_path = join(data, "vocab.txt");
    const std::string texts_path = join(data, "train.txt");

    const std::vector<std::string> vocab = load_vocab(vocab_path);
    ModelConfig mc;
    mc.n_layers = args.layers;
    mc.d_model = args.d_model;
    mc.d_ff = args.d_ff;
    mc.n_heads = args.heads;
    mc.vocab_size = static_cast<int64_t>(vocab.size());
    mc.max_seq_len = args.max_seq;
    mc.seed = args.model_seed;
    TrainConfig tc;
    tc.epochs = args.epochs;
    tc.batch_size = args.batch;
    tc.learning_rate = args.lr;
    tc.seed = args.train_seed;
    tc.target_memorization = args.target_mem;
    try {
        mc.validate();
        tc.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }

    fs::create_directories(args.out);
    const std::string ckpt_path = join(fs::path(args.out), "checkpoint.bin");
    if (fs::exists(ckpt_path) && !args.force)
        throw std::runtime_error(ckpt_path + " already exists; pass --force to overwrite");

    const std::vector<KnowledgeRecord> records = load_jsonl(corpus_path);
    const std::vector<std::string> texts = load_lines(texts_path);
    ToyTransformer model = init_model(mc, vocab);

    TrainResult result;
    try {
        result = train(model, texts, tc, &records);
        save_checkpoint(model, ckpt_path);
        write_history_csv(join(fs::path(args.out), "history.csv"), result);
    } catch (...) {
        // no partial checkpoint survives a diverged or interrupted run
        std::error_code ec;
        fs::remove(ckpt_path, ec);
        throw;
    }

    RunManifest m;
    m.command = "train";
    m.config_files = args.config_files;
    m.seeds["model"] = args.model_seed;
    m.seeds["train"] = args.train_seed;
    m.inputs = {{"corpus", corpus_path}, {"vocab", vocab_path}, {"texts", texts_path}};
    m.outputs = {"checkpoint.bin", "history.csv"};
    m.thread_bound = args.thread_bound;
    write_manifest(args.out, m);

    const size_t last = result.epoch_nll.size() - 1;
    std::cout << "trained " << result.epoch_nll.size() << " epochs, final nll "
              << fmt_g(result.epoch_nll[last]);
    if (!result.epoch_memorization.empty())
        std::cout << ", memorization " << fmt_g(result.epoch_memorization.back());
    std::cout << ", checkpoint " << ckpt_path << '\n';
    return 0;
}

int run_edit(const EditArgs& args) {
    ToyTransformer model = load_checkpoint(args.model);
    EditConfig config = edit_config_from(args);
    try {
        config.validate(model.config.n_layers);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }

    const std::vector<KnowledgeRecord> all_records = load_jsonl(args.requests);
    const std::vector<KnowledgeRecord> requests = editable_subset(all_records, args.n_requests);
    const std::vector<std::string> cov_texts = load_lines(args.cov_data);

    fs::create_directories(args.out);
    const EditOutcome outcome = apply_edits(model, requests, config, cov_texts);
    const fs::path out(args.out);
    save_checkpoint(outcome.model, join(out, "edited.bin"));
    write_edit_report_json(join(out, "report.json"), outcome.report);
    write_edit_report_csv(join(out, "report.csv"), outcome.report);

    RunManifest m;
    m.command = "edit";
    m.config_files = args.config_files;
    m.seeds["edit"] = config.seed;
    m.inputs = {{"model", args.model}, {"requests", args.requests}, {"cov_data", args.cov_data}};
    m.outputs = {"edited.bin", "report.json", "report.csv"};
    m.thread_bound = args.thread_bound;
    write_manifest(args.out, m);

    std::cout << "edited " << outcome.report.n_requests << " requests, total delta norm "
              << fmt_g(outcome.report.total_delta_norm) << ", wrote " << join(out, "edited.bin")
              << '\n';
    return 0;
}

int run_eval(const EvalArgs& args) {
    EvalConfig config;
    config.n_new = args.n_new;
    try {
        config.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }

    const std::vector<KnowledgeRecord> all_records = load_jsonl(args.requests);
    const std::vector<KnowledgeRecord> subset = editable_subset(all_records, args.n_requests);
    const int64_t n_edits = static_cast<int64_t>(subset.size());

    fs::create_directories(args.out);
    const fs::path out(args.out);
    const std::string csv_path = join(out, "metrics.csv");

    if (!args.baseline.empty()) {
        const ToyTransformer base = load_checkpoint(args.baseline);
        const MetricsResult pre = evaluate_all(base, subset, config);
        write_metrics_json(join(out, "metrics_baseline.json"), pre);
        write_metrics_csv_row(csv_path, 0, pre);  // pre-edit row
        std::cout << "baseline: efficacy " << fmt_g(pre.efficacy) << ", score " << fmt_g(pre.score)
                  << '\n';
    }

    const ToyTransformer model = load_checkpoint(args.model);
    const MetricsResult res = evaluate_all(model, subset, config);
    write_metrics_json(join(out, "metrics.json"), res);
    write_metrics_csv_row(csv_path, n_edits, res);

    RunManifest m;
    m.command = "eval";
    m.config_files = args.config_files;
    m.inputs = {{"model", args.model}, {"requests", args.requests}};
    if (!args.baseline.empty()) m.inputs["baseline"] = args.baseline;
    m.outputs = {"metrics.json", "metrics.csv"};
    if (!args.baseline.empty()) m.outputs.push_back("metrics_baseline.json");
    m.thread_bound = args.thread_bound;
    write_manifest(args.out, m);

    std::cout << "efficacy " << fmt_g(res.efficacy) << ", generalization "
              << fmt_g(res.generalization) << ", specificity " << fmt_g(res.specificity)
              << ", score " << fmt_g(res.score) << ", fluency " << fmt_g(res.fluency)
              << ", consistency " << fmt_g(res.consistency) << '\n';
    return 0;
}

int run_analyze(const AnalyzeArgs& args) {
    const bool want_similarity = !args.prompts.empty();
    const bool want_norms = !args.reports.empty();
    if (!want_similarity && !want_norms)
        throw UsageError("nothing to do: pass --prompts and/or two or more --report entries");
    if (want_similarity && args.model.empty())
        throw UsageError("--prompts requires --model");
    if (want_norms && args.reports.size() < 2)
        throw UsageError("delta-norm comparison needs at least two --report LABEL=PATH entries");

    fs::create_directories(args.out);
    const fs::path out(args.out);
    RunManifest m;
    m.command = "analyze";
    m.config_files = args.config_files;
    m.thread_bound = args.thread_bound;

    if (want_similarity) {
        const ToyTransformer model = load_checkpoint(args.model);
        const std::vector<std::string> prompts = load_lines(args.prompts);
        const SimilarityProfile profile = similarity_profile(model, prompts, args.k);
        write_similarity_csv(join(out, "similarity.csv"), profile);
        m.inputs["model"] = args.model;
        m.inputs["prompts"] = args.prompts;
        m.outputs.push_back("similarity.csv");
        std::cout << "similarity over " << profile.n_prompts << " prompts (k=" << profile.k_used
                  << ") -> " << join(out, "similarity.csv");
        if (profile.zero_cosine_warnings > 0)
            std::cout << " [" << profile.zero_cosine_warnings << " zero-vector cosines]";
        std::cout << '\n';
    }

    if (want_norms) {
        std::vector<std::pair<std::string, EditReport>> reports;
        for (const std::string& entry : args.reports) {
            const size_t eq = entry.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size())
                throw UsageError("--report expects LABEL=PATH, got '" + entry + "'");
            const std::string label = entry.substr(0, eq);
            const std::string path = entry.substr(eq + 1);
            reports.emplace_back(label, read_edit_report_json(path));
            m.inputs["report_" + label] = path;
        }
        const std::string csv = delta_norm_comparison(reports);
        const std::string path = join(out, "delta_norms.csv");
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + path);
        f << csv;
        if (!f) throw std::runtime_error("write failed: " + path);
        m.outputs.push_back("delta_norms.csv");
        std::cout << "delta norms for " << reports.size() << " reports -> " << path << '\n';
    }

    write_manifest(args.out, m);
    return 0;
}

namespace {

struct AblationCell {
    std::string mode;
    uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricsResult metrics;
    double total_delta_norm = 0.0;
};

void apply_mode(EditConfig& config, const std::string& mode) {
    if (mode == "pmet") return;
    if (mode == "no_delta_a") {
        config.optimize_delta_a = false;
    } else if (mode == "edit_mhsa") {
        config.update_mhsa_weights = true;
    } else if (mode == "even") {
        config.spread_mode = SpreadMode::even;
    } else {
        throw std::logic_error("unknown ablation mode " + mode);
    }
}

std::string cell_row(const AblationCell& c, const std::string& seed_label) {
    std::string row = c.mode + "," + seed_label + ",";
    if (!c.ok) return row + "failed,,,,,,,";
    const MetricsResult& r = c.metrics;
    row += "ok," + fmt_g(r.efficacy) + "," + fmt_g(r.generalization) + "," + fmt_g(r.specificity) +
           "," + fmt_g(r.score) + "," + fmt_g(r.fluency) + "," + fmt_g(r.consistency) + "," +
           fmt_g(c.total_delta_norm);
    return row;
}

}  // namespace

int run_ablate(const AblateArgs& args) {
    if (args.seeds.empty()) throw UsageError("--seeds must list at least one seed");
    if (args.n_requests < 1) throw UsageError("--n-requests must be >= 1");
    EvalConfig eval_config;
    eval_config.n_new = args.n_new;
    try {
        eval_config.validate();
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }

    const ToyTransformer base = load_checkpoint(args.model);
    const std::vector<KnowledgeRecord> all_records = load_jsonl(args.requests);
    const std::vector<KnowledgeRecord> requests = editable_subset(all_records, args.n_requests);
    const std::vector<std::string> cov_texts = load_lines(args.cov_data);

    const std::vector<std::string> modes{"pmet", "no_delta_a", "edit_mhsa", "even"};
    std::vector<AblationCell> cells;
    for (const std::string& mode : modes) {
        for (const uint64_t seed : args.seeds) {
            AblationCell cell;
            cell.mode = mode;
            cell.seed = seed;
            EditConfig config;
            config.critical_layers = args.critical_layers;
            config.lambda = args.lambda;
            config.opt_steps = args.steps;
            config.covariance_samples = args.cov_samples;
            config.seed = seed;
            apply_mode(config, mode);
            try {
                config.validate(base.config.n_layers);
                const EditOutcome outcome = apply_edits(base, requests, config, cov_texts);
                cell.total_delta_norm = outcome.report.total_delta_norm;
                cell.metrics = evaluate_all(outcome.model, requests, eval_config);
                cell.ok = true;
                std::cout << mode << " seed " << seed << ": score " << fmt_g(cell.metrics.score)
                          << ", delta norm " << fmt_g(cell.total_delta_norm) << '\n';
            } catch (const std::exception& e) {
                cell.error = e.what();
                std::cout << mode << " seed " << seed << ": FAILED (" << e.what() << ")\n";
            }
            cells.push_back(std::move(cell));
        }
    }

    // per-mode means over the cells that finished
    std::map<std::string, AblationCell> means;
    for (const std::string& mode : modes) {
        AblationCell agg;
        agg.mode = mode;
        int64_t n = 0;
        for (const AblationCell& c : cells) {
            if (c.mode != mode || !c.ok) continue;
            ++n;
            agg.metrics.efficacy += c.metrics.efficacy;
            agg.metrics.generalization += c.metrics.generalization;
            agg.metrics.specificity += c.metrics.specificity;
            agg.metrics.score += c.metrics.score;
            agg.metrics.fluency += c.metrics.fluency;
            agg.metrics.consistency += c.metrics.consistency;
            agg.total_delta_norm += c.total_delta_norm;
        }
        if (n > 0) {
            agg.ok = true;
            const double inv = 1.0 / static_cast<double>(n);
            agg.metrics.efficacy *= inv;
            agg.metrics.generalization *= inv;
            agg.metrics.specificity *= inv;
            agg.metrics.score *= inv;
            agg.metrics.fluency *= inv;
            agg.metrics.consistency *= inv;
            agg.total_delta_norm *= inv;
        }
        means[mode] = std::move(agg);
    }

    fs::create_directories(args.out);
    const fs::path out(args.out);
    {
        std::ofstream f(join(out, "ablation.csv"), std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + join(out, "ablation.csv"));
        f << "mode,seed,status,efficacy,generalization,specificity,score,fluency,consistency,"
             "total_delta_norm\n";
        for (const AblationCell& c : cells) f << cell_row(c, std::to_string(c.seed)) << '\n';
        for (const std::string& mode : modes) f << cell_row(means[mode], "mean") << '\n';
        if (!f) throw std::runtime_error("write failed: " + join(out, "ablation.csv"));
    }

    const AblationCell& pmet = means["pmet"];
    const AblationCell& no_da = means["no_delta_a"];
    const AblationCell& even = means["even"];
    struct Check {
        std::string name;
        double lhs, rhs;
        bool defined;
    };
    const std::vector<Check> checks{
        {"delta_norm_sqrt_ge_even", pmet.total_delta_norm, even.total_delta_norm,
         pmet.ok && even.ok},
        {"specificity_even_ge_sqrt", even.metrics.specificity, pmet.metrics.specificity,
         pmet.ok && even.ok},
        {"efficacy_sqrt_ge_even", pmet.metrics.efficacy, even.metrics.efficacy,
         pmet.ok && even.ok},
        {"efficacy_pmet_ge_no_delta_a", pmet.metrics.efficacy, no_da.metrics.efficacy,
         pmet.ok && no_da.ok},
        {"eff_gen_mean_pmet_ge_no_delta_a",
         0.5 * (pmet.metrics.efficacy + pmet.metrics.generalization),
         0.5 * (no_da.metrics.efficacy + no_da.metrics.generalization), pmet.ok && no_da.ok},
    };
    {
        std::ofstream f(join(out, "checks.csv"), std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + join(out, "checks.csv"));
        f << "check,lhs,rhs,result\n";
        for (const Check& c : checks) {
            const char* result = !c.defined ? "undefined" : (c.lhs >= c.rhs ? "pass" : "fail");
            f << c.name << ',' << (c.defined ? fmt_g(c.lhs) : "") << ','
              << (c.defined ? fmt_g(c.rhs) : "") << ',' << result << '\n';
            std::cout << "check " << c.name << ": " << result << '\n';
        }
        if (!f) throw std::runtime_error("write failed: " + join(out, "checks.csv"));
    }

    RunManifest m;
    m.command = "ablate";
    m.config_files = args.config_files;
    for (size_t i = 0; i < args.seeds.size(); ++i)
        m.seeds["sweep_" + std::to_string(i)] = args.seeds[i];
    m.inputs = {{"model", args.model}, {"requests", args.requests}, {"cov_data", args.cov_data}};
    m.outputs = {"ablation.csv", "checks.csv"};
    m.thread_bound = args.thread_bound;
    write_manifest(args.out, m);

    int64_t failed = 0;
    for (const AblationCell& c : cells) failed += !c.ok;
    if (failed > 0) {
        std::cout << failed << " of " << cells.size() << " cells failed\n";
        return 1;
    }
    return 0;
}
