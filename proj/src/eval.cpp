#include "pmetlab/eval.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pmetlab {

void EvalConfig::validate() const {
    if (n_new < 3) throw EvalError("eval config: n_new must be >= 3 (trigram entropy)");
}

namespace {

int32_t single_token_id(const ToyTransformer& model, const std::string& word, const char* what) {
    const std::vector<int32_t> ids = model.encode(word);
    if (ids.size() != 1)
        throw EvalError(std::string(what) + ": '" + word + "' is not a single token");
    return ids[0];
}

// next-token probabilities at the end of a prompt
Tensor prompt_distribution(const ToyTransformer& model, const std::string& prompt) {
    return next_token_distribution(model, model.encode_with_bos(prompt));
}

struct IndicatorDetail {
    double value = 0.0;
    int64_t n = 0;
    int64_t skipped = 0;
    std::vector<uint8_t> flat_pass;
    std::vector<std::vector<uint8_t>> nested_pass;
};

IndicatorDetail efficacy_detail(const ToyTransformer& model,
                                const std::vector<KnowledgeRecord>& records) {
    IndicatorDetail d;
    int64_t hits = 0;
    for (const KnowledgeRecord& rec : records) {
        if (!rec.target_new) {
            ++d.skipped;
            continue;
        }
        const Tensor dist = prompt_distribution(model, rec.clue);
        const double p_target = dist.at(single_token_id(model, *rec.target_new, "efficacy"));
        const double p_orig = dist.at(single_token_id(model, rec.original_object, "efficacy"));
        const bool pass = p_target > p_orig;
        d.flat_pass.push_back(pass ? 1 : 0);
        hits += pass;
        ++d.n;
    }
    if (d.n == 0) throw EvalError("efficacy: no records carry target_new");
    d.value = 100.0 * static_cast<double>(hits) / static_cast<double>(d.n);
    return d;
}

IndicatorDetail generalization_detail(const ToyTransformer& model,
                                      const std::vector<KnowledgeRecord>& records) {
    IndicatorDetail d;
    int64_t hits = 0;
    for (const KnowledgeRecord& rec : records) {
        if (!rec.target_new) continue;
        if (rec.paraphrases.empty()) {
            ++d.skipped;
            continue;
        }
        std::vector<uint8_t> row;
        for (const std::string& prompt : rec.paraphrases) {
            const Tensor dist = prompt_distribution(model, prompt);
            const double p_target =
                dist.at(single_token_id(model, *rec.target_new, "generalization"));
            const double p_orig =
                dist.at(single_token_id(model, rec.original_object, "generalization"));
            const bool pass = p_target > p_orig;
            row.push_back(pass ? 1 : 0);
            hits += pass;
            ++d.n;
        }
        d.nested_pass.push_back(std::move(row));
    }
    if (d.n == 0) throw EvalError("generalization: no paraphrase prompts");
    d.value = 100.0 * static_cast<double>(hits) / static_cast<double>(d.n);
    return d;
}

IndicatorDetail specificity_detail(const ToyTransformer& model,
                                   const std::vector<KnowledgeRecord>& records) {
    IndicatorDetail d;
    int64_t hits = 0;
    for (const KnowledgeRecord& rec : records) {
        if (!rec.target_new) continue;
        if (rec.neighborhood.empty()) {
            ++d.skipped;
            continue;
        }
        std::vector<uint8_t> row;
        for (const NeighborEntry& e : rec.neighborhood) {
            const Tensor dist = prompt_distribution(model, e.prompt);
            const double p_answer = dist.at(single_token_id(model, e.answer, "specificity"));
            const double p_target = dist.at(single_token_id(model, *rec.target_new, "specificity"));
            const bool pass = p_answer > p_target;
            row.push_back(pass ? 1 : 0);
            hits += pass;
            ++d.n;
        }
        d.nested_pass.push_back(std::move(row));
    }
    if (d.n == 0) throw EvalError("specificity: no neighborhood prompts");
    d.value = 100.0 * static_cast<double>(hits) / static_cast<double>(d.n);
    return d;
}

double ngram_entropy_bits(const std::vector<int32_t>& tokens, int64_t n) {
    const int64_t count = static_cast<int64_t>(tokens.size()) - n + 1;
    if (count < 1) return 0.0;
    std::map<std::array<int32_t, 3>, int64_t> freq;
    for (int64_t i = 0; i < count; ++i) {
        std::array<int32_t, 3> key{0, 0, 0};
        for (int64_t j = 0; j < n; ++j) key[static_cast<size_t>(j)] = tokens[static_cast<size_t>(i + j)];
        ++freq[key];
    }
    double h = 0.0;
    for (const auto& [key, c] : freq) {
        const double p = static_cast<double>(c) / static_cast<double>(count);
        h -= p * std::log2(p);
    }
    return h;
}

std::vector<int32_t> continuation(const ToyTransformer& model, const std::string& prompt,
                                  int64_t n_new) {
    const std::vector<int32_t> ids = model.encode_with_bos(prompt);
    const std::vector<int32_t> full = greedy_generate(model, ids, n_new);
    return {full.begin() + static_cast<int64_t>(ids.size()), full.end()};
}

using Doc = std::vector<std::string>;

double tfidf_cosine(const Doc& a, const Doc& b, const std::map<std::string, double>& idf) {
    std::map<std::string, double> va, vb;
    for (const std::string& w : a) va[w] += 1.0;
    for (const std::string& w : b) vb[w] += 1.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (auto& [w, tf] : va) {
        tf *= idf.at(w);
        na += tf * tf;
    }
    for (auto& [w, tf] : vb) {
        tf *= idf.at(w);
        nb += tf * tf;
    }
    for (const auto& [w, tf] : va) {
        auto it = vb.find(w);
        if (it != vb.end()) dot += tf * it->second;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double efficacy(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records) {
    return efficacy_detail(model, records).value;
}

double generalization(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records) {
    return generalization_detail(model, records).value;
}

double specificity(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records) {
    return specificity_detail(model, records).value;
}

double score(double e, double g, double s) {
    if (e <= 0.0 || g <= 0.0 || s <= 0.0) {
        std::cerr << "warning: score with a zero metric (" << e << ", " << g << ", " << s
                  << ") defined as 0\n";
        return 0.0;
    }
    return 3.0 / (1.0 / e + 1.0 / g + 1.0 / s);
}

double fluency(const ToyTransformer& model, const std::vector<std::string>& generation_prompts,
               int64_t n_new) {
    if (generation_prompts.empty()) throw EvalError("fluency: no prompts");
    if (n_new < 3) throw EvalError("fluency: n_new must be >= 3, got " + std::to_string(n_new));

    double total = 0.0;
    for (const std::string& prompt : generation_prompts) {
        const std::vector<int32_t> cont = continuation(model, prompt, n_new);
        total += (2.0 / 3.0) * ngram_entropy_bits(cont, 2) +
                 (4.0 / 3.0) * ngram_entropy_bits(cont, 3);
    }
    return total / static_cast<double>(generation_prompts.size());
}

double consistency(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records,
                   int64_t n_new) {
    if (records.empty()) throw EvalError("consistency: no records");
    if (n_new < 1) throw EvalError("consistency: n_new must be >= 1");

    auto words_of = [](const std::string& text) {
        Doc doc;
        std::istringstream is(text);
        std::string w;
        while (is >> w) doc.push_back(w);
        return doc;
    };

    // documents: one joined reference per record, then every continuation
    std::vector<Doc> ref_docs;
    std::vector<std::vector<Doc>> gen_docs(records.size());
    for (size_t r = 0; r < records.size(); ++r) {
        const KnowledgeRecord& rec = records[r];
        const std::string object = rec.target_new ? *rec.target_new : rec.original_object;
        const std::vector<std::string> refs = reference_texts(object);
        if (refs.empty()) throw EvalError("consistency: empty references for '" + object + "'");
        Doc ref;
        for (const std::string& sentence : refs)
            for (std::string& w : words_of(sentence)) ref.push_back(std::move(w));
        ref_docs.push_back(std::move(ref));
        for (const std::string& prompt : rec.generation_prompts) {
            const std::vector<int32_t> cont = continuation(model, prompt, n_new);
            gen_docs[r].push_back(words_of(model.decode(cont)));
        }
    }

    std::map<std::string, int64_t> df;
    int64_t n_docs = 0;
    auto add_doc = [&](const Doc& doc) {
        ++n_docs;
        std::map<std::string, bool> seen;
        for (const std::string& w : doc)
            if (!seen[w]) {
                seen[w] = true;
                ++df[w];
            }
    };
    for (const Doc& doc : ref_docs) add_doc(doc);
    for (const auto& docs : gen_docs)
        for (const Doc& doc : docs) add_doc(doc);

    std::map<std::string, double> idf;
    for (const auto& [w, count] : df)
        idf[w] = std::log((1.0 + static_cast<double>(n_docs)) / (1.0 + static_cast<double>(count))) +
                 1.0;

    double total = 0.0;
    int64_t pairs = 0;
    for (size_t r = 0; r < records.size(); ++r) {
        for (const Doc& gen : gen_docs[r]) {
            total += tfidf_cosine(gen, ref_docs[r], idf);
            ++pairs;
        }
    }
    if (pairs == 0) throw EvalError("consistency: no generation prompts");
    return total / static_cast<double>(pairs);
}

MetricsResult evaluate_all(const ToyTransformer& model, const std::vector<KnowledgeRecord>& records,
                           const EvalConfig& config) {
    config.validate();
    if (records.empty()) throw EvalError("evaluate_all: no records");

    MetricsResult r;
    IndicatorDetail eff = efficacy_detail(model, records);
    IndicatorDetail gen = generalization_detail(model, records);
    IndicatorDetail spec = specificity_detail(model, records);
    r.efficacy = eff.value;
    r.generalization = gen.value;
    r.specificity = spec.value;
    r.n_efficacy = eff.n;
    r.n_generalization = gen.n;
    r.n_specificity = spec.n;
    r.skipped_no_target = eff.skipped;
    r.skipped_no_paraphrase = gen.skipped;
    r.skipped_no_neighborhood = spec.skipped;
    r.efficacy_pass = std::move(eff.flat_pass);
    r.generalization_pass = std::move(gen.nested_pass);
    r.specificity_pass = std::move(spec.nested_pass);
    r.score = score(r.efficacy, r.generalization, r.specificity);

    std::vector<std::string> prompts;
    for (const KnowledgeRecord& rec : records)
        for (const std::string& p : rec.generation_prompts) prompts.push_back(p);
    r.fluency = fluency(model, prompts, config.n_new);
    r.consistency = consistency(model, records, config.n_new);
    return r;
}

void write_metrics_json(const std::string& path, const MetricsResult& r) {
    nlohmann::json j;
    j["efficacy"] = r.efficacy;
    j["generalization"] = r.generalization;
    j["specificity"] = r.specificity;
    j["score"] = r.score;
    j["fluency"] = r.fluency;
    j["consistency"] = r.consistency;
    j["counts"] = {{"efficacy", r.n_efficacy},
                   {"generalization", r.n_generalization},
                   {"specificity", r.n_specificity},
                   {"skipped_no_target", r.skipped_no_target},
                   {"skipped_no_paraphrase", r.skipped_no_paraphrase},
                   {"skipped_no_neighborhood", r.skipped_no_neighborhood}};
    j["per_record"] = {{"efficacy", r.efficacy_pass},
                       {"generalization", r.generalization_pass},
                       {"specificity", r.specificity_pass}};
    j["definitions"] = {
        {"fluency", "mean over prompts of (2/3)*H2 + (4/3)*H3, H_n = Shannon entropy (bits) of "
                    "the n-gram distribution of the greedy continuation"},
        {"consistency", "mean TF-IDF unigram cosine between greedy continuations and the "
                        "object's template reference sentences"}};

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EvalError("cannot open for writing: " + path);
    out << j.dump(2) << '\n';
    if (!out) throw EvalError("write failed: " + path);
}

void write_metrics_csv_row(const std::string& path, int64_t n_edits, const MetricsResult& r) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw EvalError("cannot open for writing: " + path);
    if (fresh) out << "n_edits,efficacy,generalization,specificity,score,fluency,consistency\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g",
                  static_cast<long long>(n_edits), r.efficacy, r.generalization, r.specificity,
                  r.score, r.fluency, r.consistency);
    out << buf << '\n';
    if (!out) throw EvalError("write failed: " + path);
}

}  // namespace pmetlab
