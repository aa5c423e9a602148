#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmetlab {

struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NeighborEntry {
    std::string prompt;  // same relation template, different subject
    std::string answer;  // that subject's true object
    bool operator==(const NeighborEntry&) const = default;
};

struct KnowledgeRecord {
    std::string subject;
    std::string relation;
    std::string object;  // the object the record currently asserts
    std::string clue;    // "src" prompt, ends right before the object
    std::vector<std::string> paraphrases;
    std::vector<NeighborEntry> neighborhood;
    std::vector<std::string> generation_prompts;
    std::optional<std::string> target_new;  // present on edit requests
    std::string original_object;
    bool operator==(const KnowledgeRecord&) const = default;
};

struct CorpusConfig {
    int64_t n_subjects = 50;
    int64_t n_relations = 5;
    int64_t paraphrases_per_fact = 2;
    int64_t neighbors_per_fact = 3;
    uint64_t seed = 1;

    void validate() const;  // throws CorpusError
};

struct Corpus {
    std::vector<KnowledgeRecord> records;
    std::vector<std::string> vocab;  // specials first, index = token id
    std::vector<std::string> training_texts;
};

// Deterministic synthetic subject-relation-object world. Subjects at even
// positions of the subject list are editable (carry target_new); odd
// positions form the neighbor pool, keeping edit and neighborhood subjects
// disjoint. Every object is a single vocabulary token.
Corpus generate_corpus(const CorpusConfig& config);

// Three fixed reference sentences about an object, used as the consistency
// metric's reference texts.
std::vector<std::string> reference_texts(const std::string& object);

void save_jsonl(const std::vector<KnowledgeRecord>& records, const std::string& path);
std::vector<KnowledgeRecord> load_jsonl(const std::string& path);

void save_vocab(const std::vector<std::string>& vocab, const std::string& path);
std::vector<std::string> load_vocab(const std::string& path);

void save_lines(const std::vector<std::string>& lines, const std::string& path);
std::vector<std::string> load_lines(const std::string& path);

}  // namespace pmetlab
