#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "finrl/backend.hpp"
#include "finrl/judge.hpp"

namespace finrl {

/// An (answer, truth) pair with the human consistency label.
struct LabeledPair {
    std::optional<std::string> question;
    std::string model_answer;
    std::string ground_truth;
    int human_label = 0;  // 1 consistent, 0 not
};

std::vector<LabeledPair> read_labeled_pairs(const std::filesystem::path& path);
void write_labeled_pairs(const std::filesystem::path& path, std::span<const LabeledPair> pairs);

struct AgreementMetrics {
    std::int64_t n = 0;
    std::int64_t disagreements = 0;  // among non-irregular verdicts
    std::int64_t irregular = 0;

    double inaccuracy() const { return static_cast<double>(disagreements) / static_cast<double>(n); }
    double irregularity() const { return static_cast<double>(irregular) / static_cast<double>(n); }
};

/// Throws InvalidArgument on length mismatch, empty input or labels other
/// than 0/1.
AgreementMetrics agreement_metrics(std::span<const Verdict> verdicts, std::span<const int> labels);

/// count / n as a percentage with one decimal, rounded half up exactly.
std::string percent_1dp(std::int64_t count, std::int64_t n);

struct ExperimentConfig {
    int repeats = 5;
    double temperature = 0.7;
    int concurrency = 8;
    RetryPolicy retry;
    std::vector<PromptFormat> formats = all_prompt_formats();
};

struct NamedBackend {
    std::string label;
    TextBackend* backend = nullptr;
};

struct FormatResult {
    PromptFormat format;
    std::vector<AgreementMetrics> per_backend;  // same order as the backends
};

/// Verdicts in (format, sample, repeat) order, for each backend.
struct ExperimentTable {
    std::vector<std::string> backends;
    std::vector<FormatResult> rows;
    std::vector<std::vector<std::vector<Verdict>>> verdicts;  // [backend][format][sample * repeats + repeat]

    /// Format, inaccuracy per backend, irregularity per backend.
    std::string to_text() const;
    std::string to_csv() const;
};

/// Every sample is judged `repeats` times per format and backend. Backend
/// failures count as irregular verdicts. Repeats of one sample run in order,
/// samples run concurrently.
ExperimentTable run_prompt_experiment(std::span<const LabeledPair> samples, std::span<const NamedBackend> backends,
                                      const ExperimentConfig& config = {});

/// Rows backend,format,human,verdict,count over human in {0,1} and verdict
/// in {0,1,irregular}.
std::string agreement_matrix_csv(const ExperimentTable& table, std::span<const LabeledPair> samples, int repeats);

}  // namespace finrl
