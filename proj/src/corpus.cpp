#include "pmetlab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pmetlab/model.hpp"
#include "pmetlab/rng.hpp"

namespace pmetlab {

namespace {

struct RelationSchema {
    const char* name;
    const char* clue;          // head phrase; prompts read "<head> {S}"
    const char* paraphrases[3];
};

// Relation phrases lead and the subject closes the prompt, so the object
// must be produced right after the subject's last token. Every bit of the
// (relation, subject) binding is therefore forced through that position's
// hidden state: there is no later prompt token that could absorb it.
// Clue and paraphrase templates are disjoint by construction.
constexpr RelationSchema kRelations[] = {
    {"lives_in", "home of", {"dwelling of", "shelter of", "residence of"}},
    {"works_as", "job of", {"trade of", "duty of", "office of"}},
    {"plays", "music of", {"tune of", "song of", "melody of"}},
    {"comes_from", "origin of", {"root of", "source of", "birthplace of"}},
    {"leads", "team of", {"crew of", "band of", "guild of"}},
    {"crafts", "work of", {"art of", "craft of", "product of"}},
};
constexpr int64_t kRelationCount = static_cast<int64_t>(std::size(kRelations));
constexpr int64_t kObjectsPerRelation = 50;

// smallest name pool whose unordered pairs cover the requested subjects
int64_t name_pool_size_for(int64_t n_subjects) {
    const int64_t couples = (n_subjects + 1) / 2;
    int64_t w = 3;
    while (w * (w - 1) / 2 < couples) ++w;
    return w;
}

constexpr const char* kFillerWords[] = {"about", "consider", "truly", "it",
                                        "is",    "a",        "fine",  "thing"};

std::string render(const std::string& subject, const char* head) {
    return std::string(head) + " " + subject;
}

std::vector<std::string> generation_prompts_for(const std::string& subject) {
    return {"about " + subject, "consider " + subject, "truly " + subject};
}

}  // namespace

std::vector<std::string> reference_texts(const std::string& object) {
    return {"it is " + object, object + " is a fine thing", "truly " + object + " is " + object};
}

void CorpusConfig::validate() const {
    if (n_subjects < 1 || n_relations < 1 || paraphrases_per_fact < 1 || neighbors_per_fact < 1)
        throw CorpusError("corpus config: all counts must be >= 1");
    if (n_relations > kRelationCount)
        throw CorpusError("corpus config: n_relations " + std::to_string(n_relations) +
                          " exceeds relation inventory (" + std::to_string(kRelationCount) + ")");
    if (paraphrases_per_fact > 3)
        throw CorpusError("corpus config: paraphrases_per_fact exceeds paraphrase templates (3)");
    // odd-position subjects form the neighbor pool; every record excludes
    // exactly one pool member (itself when odd, its reversed twin when even)
    const int64_t neighbor_pool = n_subjects / 2;
    if (neighbors_per_fact > neighbor_pool - 1)
        throw CorpusError("corpus config: neighbors_per_fact " + std::to_string(neighbors_per_fact) +
                          " exceeds usable neighbor pool " + std::to_string(neighbor_pool - 1));
}

Corpus generate_corpus(const CorpusConfig& config) {
    config.validate();
    Rng rng(config.seed);

    // candidate content words: consonant-vowel-consonant-vowel, 4 letters
    static const char consonants[] = {'b', 'd', 'f', 'g', 'k', 'l', 'm',
                                      'n', 'p', 'r', 's', 't', 'v', 'z'};
    static const char vowels[] = {'a', 'e', 'i', 'o', 'u'};
    std::vector<std::string> pool;
    for (char c1 : consonants)
        for (char v1 : vowels)
            for (char c2 : consonants)
                for (char v2 : vowels) pool.push_back(std::string{c1, v1, c2, v2});
    rng.shuffle(pool);

    std::set<std::string> reserved;
    for (int i = 0; i < 4; ++i) reserved.insert(kSpecialTokens[i]);
    for (const char* w : kFillerWords) reserved.insert(w);
    for (int64_t r = 0; r < config.n_relations; ++r) {
        const RelationSchema& schema = kRelations[r];
        for (const std::string& tmpl :
             {std::string(schema.clue), std::string(schema.paraphrases[0]),
              std::string(schema.paraphrases[1]), std::string(schema.paraphrases[2])}) {
            std::istringstream is(tmpl);
            std::string w;
            while (is >> w) reserved.insert(w);
        }
    }

    const int64_t name_pool = name_pool_size_for(config.n_subjects);
    const int64_t need = name_pool + config.n_relations * kObjectsPerRelation;
    std::vector<std::string> words;
    for (const std::string& w : pool) {
        if (static_cast<int64_t>(words.size()) == need) break;
        if (!reserved.count(w)) words.push_back(w);
    }
    if (static_cast<int64_t>(words.size()) < need)
        throw CorpusError("corpus: vocabulary overflow, need " + std::to_string(need) +
                          " content words");

    // Subjects are ordered two-word names over a small shared pool, and both
    // orders of a drawn pair become adjacent subjects. Any single name word is
    // shared by several subjects and an order-free mix of the two word
    // embeddings collides with the reversed subject, so identity only exists
    // where the words are combined in order: at the subject's last token.
    std::vector<std::string> names(words.begin(), words.begin() + name_pool);
    std::vector<std::pair<int64_t, int64_t>> couples;
    for (int64_t i = 0; i < name_pool; ++i)
        for (int64_t j = i + 1; j < name_pool; ++j) couples.emplace_back(i, j);
    rng.shuffle(couples);
    std::vector<std::string> subjects;
    for (const auto& [i, j] : couples) {
        if (static_cast<int64_t>(subjects.size()) == config.n_subjects) break;
        subjects.push_back(names[static_cast<size_t>(i)] + " " + names[static_cast<size_t>(j)]);
        if (static_cast<int64_t>(subjects.size()) == config.n_subjects) break;
        subjects.push_back(names[static_cast<size_t>(j)] + " " + names[static_cast<size_t>(i)]);
    }

    std::vector<std::vector<std::string>> objects(static_cast<size_t>(config.n_relations));
    int64_t cursor = name_pool;
    for (int64_t r = 0; r < config.n_relations; ++r) {
        objects[static_cast<size_t>(r)].assign(words.begin() + cursor,
                                               words.begin() + cursor + kObjectsPerRelation);
        cursor += kObjectsPerRelation;
    }

    // the fact table: object index for every (subject, relation) pair
    std::vector<std::vector<int64_t>> fact(static_cast<size_t>(config.n_subjects),
                                           std::vector<int64_t>(static_cast<size_t>(config.n_relations)));
    for (int64_t s = 0; s < config.n_subjects; ++s)
        for (int64_t r = 0; r < config.n_relations; ++r)
            fact[static_cast<size_t>(s)][static_cast<size_t>(r)] =
                static_cast<int64_t>(rng.below(kObjectsPerRelation));

    // One counterfactual-bearing relation per even subject. Requests sharing
    // a subject would share their key vector (it is read at the subject's
    // last token, before the relation enters) while demanding different
    // values, an inconsistent system no editor can satisfy.
    std::vector<int64_t> editable_relation(static_cast<size_t>(config.n_subjects), -1);
    for (int64_t s = 0; s < config.n_subjects; s += 2)
        editable_relation[static_cast<size_t>(s)] = static_cast<int64_t>(rng.below(config.n_relations));

    std::vector<int64_t> neighbor_pool;
    for (int64_t s = 1; s < config.n_subjects; s += 2) neighbor_pool.push_back(s);

    Corpus out;
    for (int64_t s = 0; s < config.n_subjects; ++s) {
        for (int64_t r = 0; r < config.n_relations; ++r) {
            const RelationSchema& schema = kRelations[r];
            KnowledgeRecord rec;
            rec.subject = subjects[static_cast<size_t>(s)];
            rec.relation = schema.name;
            rec.original_object =
                objects[static_cast<size_t>(r)][static_cast<size_t>(fact[static_cast<size_t>(s)][static_cast<size_t>(r)])];
            rec.object = rec.original_object;
            rec.clue = render(rec.subject, schema.clue);
            for (int64_t p = 0; p < config.paraphrases_per_fact; ++p)
                rec.paraphrases.push_back(render(rec.subject, schema.paraphrases[p]));
            rec.generation_prompts = generation_prompts_for(rec.subject);

            auto object_of = [&](int64_t s2) -> const std::string& {
                return objects[static_cast<size_t>(r)]
                              [static_cast<size_t>(fact[static_cast<size_t>(s2)][static_cast<size_t>(r)])];
            };

            // Counterfactual target: the same-relation object of a subject
            // sharing this subject's last name word. Such targets are
            // attested, type-consistent, and reachable from the subject's
            // aggregated state, the way swapped-entity counterfactuals are.
            if (editable_relation[static_cast<size_t>(s)] == r) {
                const std::string last_word = rec.subject.substr(rec.subject.find(' ') + 1);
                std::vector<std::string> choices;
                for (int64_t s2 = 0; s2 < config.n_subjects; ++s2) {
                    if (s2 == s) continue;
                    const std::string& cand = subjects[static_cast<size_t>(s2)];
                    if (cand.substr(cand.find(' ') + 1) != last_word) continue;
                    const std::string& o = object_of(s2);
                    if (o != rec.original_object && !std::count(choices.begin(), choices.end(), o))
                        choices.push_back(o);
                }
                if (choices.empty())
                    for (int64_t s2 = 0; s2 < config.n_subjects; ++s2) {
                        const std::string& o = object_of(s2);
                        if (o != rec.original_object &&
                            !std::count(choices.begin(), choices.end(), o))
                            choices.push_back(o);
                    }
                if (choices.empty()) throw CorpusError("corpus: no counterfactual object available");
                // prefer the candidate attested by the most subjects in this
                // relation: widely shared objects carry a broader prior at
                // related prompts, matching the swapped-entity texture of
                // natural counterfactuals
                std::vector<int64_t> counts(choices.size(), 0);
                for (size_t c = 0; c < choices.size(); ++c)
                    for (int64_t s2 = 0; s2 < config.n_subjects; ++s2)
                        if (object_of(s2) == choices[c]) ++counts[c];
                const int64_t best = *std::max_element(counts.begin(), counts.end());
                std::vector<std::string> top;
                for (size_t c = 0; c < choices.size(); ++c)
                    if (counts[c] == best) top.push_back(choices[c]);
                rec.target_new = top[rng.below(top.size())];
            }

            // neighbors: distinct odd-pool subjects, never the record's own
            // subject, its word-reversed twin (the twin shares both name
            // words, so it is measured by its own record instead), or a
            // subject whose object equals the counterfactual target
            const int64_t twin = (s % 2 == 0) ? (s + 1 < config.n_subjects ? s + 1 : -1) : s - 1;
            std::vector<int64_t> candidates;
            for (int64_t n : neighbor_pool)
                if (n != s && n != twin && (!rec.target_new || object_of(n) != *rec.target_new))
                    candidates.push_back(n);
            if (static_cast<int64_t>(candidates.size()) < config.neighbors_per_fact)
                throw CorpusError("corpus: not enough neighbor subjects for subject index " +
                                  std::to_string(s));
            for (int64_t k = 0; k < config.neighbors_per_fact; ++k) {
                const size_t pick = static_cast<size_t>(rng.below(candidates.size()));
                const int64_t n = candidates[pick];
                candidates.erase(candidates.begin() + static_cast<int64_t>(pick));
                NeighborEntry e;
                e.prompt = render(subjects[static_cast<size_t>(n)], schema.clue);
                e.answer = object_of(n);
                rec.neighborhood.push_back(std::move(e));
            }
            out.records.push_back(std::move(rec));
        }
    }

    // vocabulary: specials, name words, object pools, template words, fillers
    out.vocab.reserve(static_cast<size_t>(need) + 40);
    for (int i = 0; i < 4; ++i) out.vocab.emplace_back(kSpecialTokens[i]);
    for (const std::string& w : names) out.vocab.push_back(w);
    for (const auto& rel_objects : objects)
        for (const std::string& o : rel_objects) out.vocab.push_back(o);
    for (const std::string& w : reserved)
        if (!std::count(out.vocab.begin(), out.vocab.end(), w)) out.vocab.push_back(w);

    // Each fact is rendered through the clue (bare and shifted) plus >=2
    // paraphrase templates. Shifted renderings carry 1-6 leading noise words
    // (fillers, objects, stray name words) so the subject's absolute position
    // varies, and spaced renderings put 0-2 filler words between the subject
    // and the relation phrase so the subject's offset from the relation
    // varies too. A circuit keyed to fixed or relation-relative token
    // positions cannot fit them all; only the subject's own bound state can.
    std::vector<std::string> noise_words(kFillerWords, kFillerWords + std::size(kFillerWords));
    for (const auto& rel_objects : objects)
        for (const std::string& o : rel_objects) noise_words.push_back(o);
    for (const std::string& n : names) noise_words.push_back(n);
    auto shifted = [&](const std::string& body) {
        const int64_t shift = 1 + static_cast<int64_t>(rng.below(6));
        std::string text;
        for (int64_t f = 0; f < shift; ++f)
            text += noise_words[rng.below(noise_words.size())] + " ";
        return text + body;
    };
    auto spaced = [&](const std::string& subject, const char* head) {
        const int64_t gap = static_cast<int64_t>(rng.below(3));
        std::string mid;
        for (int64_t f = 0; f < gap; ++f)
            mid += std::string(kFillerWords[rng.below(std::size(kFillerWords))]) + " ";
        return std::string(head) + " " + mid + subject;
    };
    for (const KnowledgeRecord& rec : out.records) {
        const RelationSchema* schema = nullptr;
        for (const RelationSchema& s : kRelations)
            if (rec.relation == s.name) schema = &s;
        out.training_texts.push_back(rec.clue + " " + rec.object);
        out.training_texts.push_back(shifted(spaced(rec.subject, schema->clue) + " " + rec.object));
        out.training_texts.push_back(shifted(spaced(rec.subject, schema->paraphrases[0]) + " " + rec.object));
        out.training_texts.push_back(render(rec.subject, schema->paraphrases[1]) + " " + rec.object);
        // non-fact continuations of the same clue, at the same position as
        // the canonical rendering, keep the memorized object's probability
        // mass shy of 1: the point answer must stay the argmax without
        // becoming an untouchable attractor. Two distinct continuation
        // words keep either one from becoming an attractor itself.
        out.training_texts.push_back(rec.clue + " is a fine thing");
        out.training_texts.push_back(rec.clue + " truly a fine thing");
        // an underspecified subject-shaped rendering that doubles the
        // subject's last word (real subjects always pair two distinct
        // words, so no fact collides with it): records sharing that word
        // attest different objects here, and the model keeps a small
        // shared-word prior alongside each exact binding instead of
        // driving every alternative to the floor
        const std::string last_word = rec.subject.substr(rec.subject.rfind(' ') + 1);
        out.training_texts.push_back(render(last_word + " " + last_word, schema->clue) + " " + rec.object);
    }
    return out;
}

namespace {

using nlohmann::json;

json record_to_json(const KnowledgeRecord& rec) {
    json j;
    j["subject"] = rec.subject;
    j["relation"] = rec.relation;
    j["src"] = rec.clue;
    j["rephrase"] = rec.paraphrases;
    json loc = json::array();
    for (const NeighborEntry& e : rec.neighborhood) loc.push_back({{"prompt", e.prompt}, {"answer", e.answer}});
    j["loc"] = loc;
    j["generation_prompts"] = rec.generation_prompts;
    j["original_object"] = rec.original_object;
    if (rec.target_new)
        j["target_new"] = *rec.target_new;
    else
        j["target_new"] = nullptr;
    return j;
}

const json& require_field(const json& j, const char* name, size_t line_no) {
    auto it = j.find(name);
    if (it == j.end())
        throw CorpusError("jsonl line " + std::to_string(line_no) + ": missing field '" + name + "'");
    return *it;
}

KnowledgeRecord record_from_json(const json& j, size_t line_no) {
    KnowledgeRecord rec;
    try {
        rec.subject = require_field(j, "subject", line_no).get<std::string>();
        rec.clue = require_field(j, "src", line_no).get<std::string>();
        rec.paraphrases = require_field(j, "rephrase", line_no).get<std::vector<std::string>>();
        for (const json& e : require_field(j, "loc", line_no)) {
            NeighborEntry n;
            n.prompt = require_field(e, "prompt", line_no).get<std::string>();
            n.answer = require_field(e, "answer", line_no).get<std::string>();
            rec.neighborhood.push_back(std::move(n));
        }
        rec.generation_prompts =
            require_field(j, "generation_prompts", line_no).get<std::vector<std::string>>();
        rec.original_object = require_field(j, "original_object", line_no).get<std::string>();
        rec.object = rec.original_object;
        if (j.contains("relation") && !j["relation"].is_null())
            rec.relation = j["relation"].get<std::string>();
        if (j.contains("target_new") && !j["target_new"].is_null())
            rec.target_new = j["target_new"].get<std::string>();
    } catch (const json::exception& e) {
        throw CorpusError("jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    return rec;
}

}  // namespace

void save_jsonl(const std::vector<KnowledgeRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw CorpusError("cannot open for writing: " + path);
    for (const KnowledgeRecord& rec : records) out << record_to_json(rec).dump() << '\n';
    if (!out) throw CorpusError("write failed: " + path);
}

std::vector<KnowledgeRecord> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open: " + path);
    std::vector<KnowledgeRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw CorpusError("jsonl line " + std::to_string(line_no) + ": parse error: " + e.what());
        }
        records.push_back(record_from_json(j, line_no));
    }
    return records;
}

void save_vocab(const std::vector<std::string>& vocab, const std::string& path) {
    save_lines(vocab, path);
}

std::vector<std::string> load_vocab(const std::string& path) {
    std::vector<std::string> vocab = load_lines(path);
    if (vocab.size() < 4) throw CorpusError("vocab file too small: " + path);
    return vocab;
}

void save_lines(const std::vector<std::string>& lines, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw CorpusError("cannot open for writing: " + path);
    for (const std::string& l : lines) out << l << '\n';
    if (!out) throw CorpusError("write failed: " + path);
}

std::vector<std::string> load_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return lines;
}

}  // namespace pmetlab
