#include "pmetlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pmetlab {

std::vector<int32_t> top_k_vocab(const ToyTransformer& model, const Tensor& h, int64_t k) {
    if (h.rank() != 1 || h.size() != model.config.d_model)
        throw AnalysisError("top_k_vocab: h must be rank-1 of dim d_model");
    if (k < 1 || k > model.config.vocab_size)
        throw AnalysisError("top_k_vocab: k " + std::to_string(k) + " out of range [1.." +
                            std::to_string(model.config.vocab_size) + "]");

    const Tensor normed = layernorm(h, model.lnf_gain, model.lnf_bias);
    const int64_t v = model.config.vocab_size;
    std::vector<std::pair<double, int32_t>> scored(static_cast<size_t>(v));
    for (int64_t i = 0; i < v; ++i)
        scored[static_cast<size_t>(i)] = {detail::dot_n(model.tok_emb.row(i), normed.data(),
                                                        model.config.d_model),
                                          static_cast<int32_t>(i)};
    // descending logit, ascending id on ties
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i) out.push_back(scored[static_cast<size_t>(i)].second);
    return out;
}

double jaccard(const std::vector<int32_t>& a, const std::vector<int32_t>& b) {
    if (a.empty() && b.empty()) return 1.0;
    const std::set<int32_t> sa(a.begin(), a.end());
    const std::set<int32_t> sb(b.begin(), b.end());
    int64_t inter = 0;
    for (int32_t x : sa) inter += sb.count(x);
    const int64_t uni = static_cast<int64_t>(sa.size() + sb.size()) - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
    const double na = norm2(a), nb = norm2(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

SimilarityProfile similarity_profile(const ToyTransformer& model,
                                     const std::vector<std::string>& prompts, int64_t k) {
    if (prompts.empty()) throw AnalysisError("similarity_profile: no prompts");

    const int64_t n_layers = model.config.n_layers;
    const int64_t d = model.config.d_model;
    SimilarityProfile profile;
    profile.k_used = k;
    profile.n_prompts = static_cast<int64_t>(prompts.size());
    profile.layers.resize(static_cast<size_t>(n_layers));
    for (int64_t l = 0; l < n_layers; ++l) profile.layers[static_cast<size_t>(l)].layer = l + 1;

    auto row_vec = [&](const Tensor& mat, int64_t r) {
        Tensor v = Tensor::vector(d);
        for (int64_t i = 0; i < d; ++i) v.at(i) = mat.at(r, i);
        return v;
    };

    for (const std::string& prompt : prompts) {
        const std::vector<int32_t> tokens = model.encode_with_bos(prompt);
        const ForwardResult fr = forward(model, tokens);
        const int64_t last = static_cast<int64_t>(tokens.size()) - 1;
        for (int64_t l = 0; l < n_layers; ++l) {
            const Tensor h_in = row_vec(fr.trace.layer_input[static_cast<size_t>(l)], last);
            const Tensor a = row_vec(fr.trace.attn_out[static_cast<size_t>(l)], last);
            const Tensor m = row_vec(fr.trace.ffn_out[static_cast<size_t>(l)], last);

            LayerSimilarity& row = profile.layers[static_cast<size_t>(l)];
            if (norm2(h_in) == 0.0 || norm2(a) == 0.0) ++profile.zero_cosine_warnings;
            if (norm2(h_in) == 0.0 || norm2(m) == 0.0) ++profile.zero_cosine_warnings;
            row.cos_mhsa += cosine_similarity(h_in, a);
            row.cos_ffn += cosine_similarity(h_in, m);
            row.jac_mhsa += jaccard(top_k_vocab(model, h_in, k), top_k_vocab(model, a, k));
            row.jac_ffn += jaccard(top_k_vocab(model, h_in, k), top_k_vocab(model, m, k));
        }
    }
    const double inv = 1.0 / static_cast<double>(prompts.size());
    for (LayerSimilarity& row : profile.layers) {
        row.cos_mhsa *= inv;
        row.cos_ffn *= inv;
        row.jac_mhsa *= inv;
        row.jac_ffn *= inv;
    }
    return profile;
}

void write_similarity_csv(const std::string& path, const SimilarityProfile& profile) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw AnalysisError("cannot open for writing: " + path);
    out << "layer,cos_mhsa,cos_ffn,jac_mhsa,jac_ffn\n";
    char buf[192];
    for (const LayerSimilarity& row : profile.layers) {
        std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g,%.12g,%.12g",
                      static_cast<long long>(row.layer), row.cos_mhsa, row.cos_ffn, row.jac_mhsa,
                      row.jac_ffn);
        out << buf << '\n';
    }
    if (!out) throw AnalysisError("write failed: " + path);
}

std::string delta_norm_comparison(
    const std::vector<std::pair<std::string, EditReport>>& reports) {
    if (reports.size() < 2) throw AnalysisError("delta_norm_comparison: need at least 2 reports");

    // per-layer norm = sum across weight kinds within the layer
    std::vector<std::map<int64_t, double>> per_layer(reports.size());
    for (size_t i = 0; i < reports.size(); ++i)
        for (const EditLayerRow& row : reports[i].second.rows)
            per_layer[i][row.layer] += row.delta_frobenius;

    for (size_t i = 1; i < per_layer.size(); ++i) {
        if (per_layer[i].size() != per_layer[0].size() ||
            !std::equal(per_layer[i].begin(), per_layer[i].end(), per_layer[0].begin(),
                        [](const auto& a, const auto& b) { return a.first == b.first; }))
            throw AnalysisError("delta_norm_comparison: reports edit different layer sets ('" +
                                reports[0].first + "' vs '" + reports[i].first + "')");
    }

    std::ostringstream os;
    os << "layer";
    for (const auto& [label, report] : reports) os << ',' << label;
    os << '\n';
    char buf[64];
    for (const auto& entry : per_layer[0]) {
        os << entry.first;
        for (const auto& column : per_layer) {
            std::snprintf(buf, sizeof(buf), "%.12g", column.at(entry.first));
            os << ',' << buf;
        }
        os << '\n';
    }
    os << "total";
    for (const auto& labeled : reports) {
        std::snprintf(buf, sizeof(buf), "%.12g", labeled.second.total_delta_norm);
        os << ',' << buf;
    }
    os << '\n';
    return os.str();
}

}  // namespace pmetlab
