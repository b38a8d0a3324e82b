#pragma once

// Shared builders for tests: tiny instances and scripted mock backends.

#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "selfdetect/backend.hpp"
#include "selfdetect/core.hpp"

namespace testsupport {

inline selfdetect::QuestionInstance make_instance(
    std::string id, std::initializer_list<const char*> choices,
    std::string question = "the weather is lovely and everyone smiles",
    std::string instruction = "classify the sentiment as Positive or Negative",
    selfdetect::Task task = selfdetect::Task::SA) {
    selfdetect::QuestionInstance q;
    q.id = std::move(id);
    q.task = task;
    q.instruction = std::move(instruction);
    q.question = std::move(question);
    for (const char* c : choices)
        q.answer_space.push_back(selfdetect::CandidateAnswer::from_surface(c));
    return q;
}

inline selfdetect::QuestionInstance make_piqa(std::string id, std::string question,
                                              const char* a, const char* b) {
    return make_instance(std::move(id), {a, b}, std::move(question),
                         "read the given question and select the most appropriate answer by "
                         "indicating the associated letter",
                         selfdetect::Task::CQA);
}

/// Fluent mock-script builder; entries match in insertion order, most
/// specific first.
class ScriptBuilder {
public:
    ScriptBuilder& fixed(std::vector<std::string> substrings, std::string response) {
        selfdetect::MockScript::Entry e;
        e.match_substrings = std::move(substrings);
        e.response = std::move(response);
        script_.entries.push_back(std::move(e));
        return *this;
    }

    ScriptBuilder& fixed_at(std::vector<std::string> substrings, int sample_index,
                            std::string response) {
        selfdetect::MockScript::Entry e;
        e.match_substrings = std::move(substrings);
        e.sample_index = sample_index;
        e.response = std::move(response);
        script_.entries.push_back(std::move(e));
        return *this;
    }

    ScriptBuilder& exact(std::string prompt, std::string response) {
        selfdetect::MockScript::Entry e;
        e.match_exact = std::move(prompt);
        e.response = std::move(response);
        script_.entries.push_back(std::move(e));
        return *this;
    }

    ScriptBuilder& categorical(std::vector<std::string> substrings,
                               std::vector<std::pair<std::string, double>> dist) {
        selfdetect::MockScript::Entry e;
        e.match_substrings = std::move(substrings);
        e.distribution = std::move(dist);
        script_.entries.push_back(std::move(e));
        return *this;
    }

    ScriptBuilder& seed(std::uint64_t s) {
        script_.rng_seed = s;
        return *this;
    }

    selfdetect::MockScript build() const {
        auto s = script_;
        s.validate();
        return s;
    }

private:
    selfdetect::MockScript script_;
};

}  // namespace testsupport
