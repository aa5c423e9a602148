#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

// PMETLAB_THREADS is an upper bound on internal parallelism. Execution is
// sequential, which satisfies any bound >= 1; the value is recorded in
// manifests for provenance.
int64_t thread_bound_from_env() {
    const char* raw = std::getenv("PMETLAB_THREADS");
    if (raw == nullptr) return 1;
    try {
        const long long v = std::stoll(raw);
        return v < 1 ? 1 : v;
    } catch (const std::exception&) {
        return 1;
    }
}

void fill_common(CommonArgs& args, CLI::App* sub) {
    if (sub->get_config_ptr() != nullptr && sub->get_config_ptr()->count() > 0)
        args.config_files = sub->get_config_ptr()->results();
    args.thread_bound = thread_bound_from_env();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pmetlab: a desk-scale laboratory for key-value model editing"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "pmetlab 0.1.0");

    int rc = 0;

    GenCorpusArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic fact corpus");
    gen_cmd->set_config("--config", "", "Flat key=value config file (flags win)");
    gen_cmd->add_option("--subjects", gen.subjects, "Number of subjects");
    gen_cmd->add_option("--relations", gen.relations, "Relations per subject");
    gen_cmd->add_option("--paraphrases", gen.paraphrases, "Paraphrases per fact");
    gen_cmd->add_option("--neighbors", gen.neighbors, "Neighborhood prompts per fact");
    gen_cmd->add_option("--seed", gen.seed, "Corpus seed");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->callback([&] {
        fill_common(gen, gen_cmd);
        rc = run_gen_corpus(gen);
    });

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the toy transformer on a corpus");
    train_cmd->set_config("--config", "", "Flat key=value config file (flags win)");
    train_cmd->add_option("--data", tr.data, "Directory with corpus.jsonl, vocab.txt, train.txt")
        ->required();
    train_cmd->add_option("--out", tr.out, "Output directory")->required();
    train_cmd->add_flag("--force", tr.force, "Overwrite an existing checkpoint");
    train_cmd->add_option("--layers", tr.layers, "Transformer layers");
    train_cmd->add_option("--d-model", tr.d_model, "Residual width");
    train_cmd->add_option("--d-ff", tr.d_ff, "FFN inner width");
    train_cmd->add_option("--heads", tr.heads, "Attention heads");
    train_cmd->add_option("--max-seq", tr.max_seq, "Maximum sequence length");
    train_cmd->add_option("--model-seed", tr.model_seed, "Weight init seed");
    train_cmd->add_option("--epochs", tr.epochs, "Max epochs");
    train_cmd->add_option("--batch", tr.batch, "Batch size (texts)");
    train_cmd->add_option("--lr", tr.lr, "AdamW learning rate");
    train_cmd->add_option("--train-seed", tr.train_seed, "Shuffling seed");
    train_cmd->add_option("--target-mem", tr.target_mem, "Early-stop memorization rate");
    train_cmd->callback([&] {
        fill_common(tr, train_cmd);
        rc = run_train(tr);
    });

    EditArgs ed;
    CLI::App* edit_cmd = app.add_subcommand("edit", "Apply counterfactual weight edits");
    edit_cmd->set_config("--config", "", "Flat key=value config file (flags win)");
    edit_cmd->add_option("--model", ed.model, "Base checkpoint")->required();
    edit_cmd->add_option("--requests", ed.requests, "Corpus JSONL with target_new records")
        ->required();
    edit_cmd->add_option("--cov-data", ed.cov_data, "Text file sampled for key covariance")
        ->required();
    edit_cmd->add_option("--out", ed.out, "Output directory")->required();
    edit_cmd->add_option("--n-requests", ed.n_requests, "Edits to apply (0 = all editable)");
    edit_cmd->add_option("--critical-layers", ed.critical_layers, "Layers receiving increments")
        ->delimiter(',');
    edit_cmd->add_option("--lambda", ed.lambda, "Covariance scale");
    edit_cmd->add_option("--phi", ed.phi, "Target NLL weight (phase 1)");
    edit_cmd->add_option("--mu", ed.mu, "KL anchor weight");
    edit_cmd->add_option("--phase2-phi", ed.phase2_phi, "Target NLL weight after memorization");
    edit_cmd->add_option("--kl-stop", ed.kl_stop, "Phase-2 KL early-stop threshold");
    edit_cmd->add_option("--steps", ed.steps, "Optimization steps per request");
    edit_cmd->add_option("--opt-lr", ed.opt_lr, "Delta learning rate");
    edit_cmd->add_option("--clamp", ed.clamp, "Delta norm clamp ratio");
    edit_cmd->add_option("--prefixes", ed.prefixes, "Prefix contexts per request");
    edit_cmd->add_option("--cov-samples", ed.cov_samples, "Key samples for covariance");
    edit_cmd->add_option("--spread", ed.spread, "Residual spread: sqrt or even")
        ->check(CLI::IsMember({"sqrt", "even"}));
    edit_cmd->add_flag("--no-delta-a", ed.no_delta_a, "Skip the MHSA delta (ablation)");
    edit_cmd->add_flag("--edit-mhsa", ed.edit_mhsa, "Also update MHSA output weights (ablation)");
    edit_cmd->add_option("--edit-seed", ed.seed, "Prefix and covariance sampling seed");
    edit_cmd->callback([&] {
        fill_common(ed, edit_cmd);
        rc = run_edit(ed);
    });

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on edit metrics");
    eval_cmd->set_config("--config", "", "Flat key=value config file (flags win)");
    eval_cmd->add_option("--model", ev.model, "Checkpoint to score")->required();
    eval_cmd->add_option("--requests", ev.requests, "Corpus JSONL with target_new records")
        ->required();
    eval_cmd->add_option("--baseline", ev.baseline, "Pre-edit checkpoint for a paired row");
    eval_cmd->add_option("--out", ev.out, "Output directory")->required();
    eval_cmd->add_option("--n-requests", ev.n_requests, "Records to score (0 = all editable)");
    eval_cmd->add_option("--n-new", ev.n_new, "Continuation length for fluency/consistency");
    eval_cmd->callback([&] {
        fill_common(ev, eval_cmd);
        rc = run_eval(ev);
    });

    AnalyzeArgs an;
    CLI::App* analyze_cmd =
        app.add_subcommand("analyze", "Layer similarity profiles and delta-norm comparisons");
    analyze_cmd->set_config("--config", "", "Flat key=value config file (flags win)");
    analyze_cmd->add_option("--model", an.model, "Checkpoint for the similarity profile");
    analyze_cmd->add_option("--prompts", an.prompts, "Prompt file, one per line");
    analyze_cmd->add_option("--report", an.reports, "LABEL=report.json entries to compare");
    analyze_cmd->add_option("--k", an.k, "Top-k size for vocab projections");
    analyze_cmd->add_option("--out", an.out, "Output directory")->required();
    analyze_cmd->callback([&] {
        fill_common(an, analyze_cmd);
        rc = run_analyze(an);
    });

    AblateArgs ab;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "Sweep edit variants across seeds");
    ablate_cmd->set_config("--config", "", "Flat key=value config file (flags win)");
    ablate_cmd->add_option("--model", ab.model, "Base checkpoint")->required();
    ablate_cmd->add_option("--requests", ab.requests, "Corpus JSONL with target_new records")
        ->required();
    ablate_cmd->add_option("--cov-data", ab.cov_data, "Text file sampled for key covariance")
        ->required();
    ablate_cmd->add_option("--out", ab.out, "Output directory")->required();
    ablate_cmd->add_option("--n-requests", ab.n_requests, "Edits per cell");
    ablate_cmd->add_option("--seeds", ab.seeds, "Sweep seeds")->delimiter(',');
    ablate_cmd->add_option("--n-new", ab.n_new, "Continuation length for fluency/consistency");
    ablate_cmd->add_option("--critical-layers", ab.critical_layers, "Layers receiving increments")
        ->delimiter(',');
    ablate_cmd->add_option("--lambda", ab.lambda, "Covariance scale");
    ablate_cmd->add_option("--steps", ab.steps, "Optimization steps per request");
    ablate_cmd->add_option("--cov-samples", ab.cov_samples, "Key samples for covariance");
    ablate_cmd->callback([&] {
        fill_common(ab, ablate_cmd);
        rc = run_ablate(ab);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return rc;
}
