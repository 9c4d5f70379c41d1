#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "finrl/backend.hpp"
#include "finrl/judge.hpp"
#include "finrl/jsonl.hpp"
#include "finrl/sft.hpp"

namespace finrl {

enum class QuestionKind { Objective, Subjective };
enum class Language { Zh, En };

/// A question extracted from one of the raw source datasets.
struct RawQuestion {
    std::string id;
    std::string question;
    QuestionKind kind = QuestionKind::Objective;
    std::optional<std::string> reference;  // required for objective questions
    std::string source;
    Language language = Language::En;
};

/// Source datasets of the training corpus with their data categories, in
/// table order.
struct SourceInfo {
    std::string name;
    std::string category;
};
const std::vector<SourceInfo>& known_sources();

void validate_raw_question(const RawQuestion& q, std::string_view where);
std::vector<RawQuestion> read_raw_questions(const std::filesystem::path& path);
void write_raw_questions(const std::filesystem::path& path, std::span<const RawQuestion> questions);

// --- distillation ----------------------------------------------------------

inline constexpr std::string_view kBoxedInstruction = "Please use \\boxed{} to wrap the final answer";

/// Task description, input, instruction, execution directive and normative
/// notes. Objective questions also get the boxed-answer instruction.
std::string build_distill_prompt(const RawQuestion& raw);

struct DistilledRecord {
    RawQuestion raw;
    std::string reasoning;
    std::string answer;
    double temperature = 0.0;
    std::string backend_id;

    SftRecord to_sft() const { return {raw.question, reasoning, answer}; }
};

struct DistillConfig {
    double temperature = 0.6;
    int concurrency = 8;
    int max_tokens = 4096;
    RetryPolicy retry;
    std::optional<std::filesystem::path> journal;
};

struct DistillFailure {
    std::string id;
    std::string reason;
};

struct DistillResult {
    std::vector<DistilledRecord> records;  // sorted by id
    std::vector<DistillFailure> failures;  // sorted by id
    int generated = 0;                     // backend generations made by this run
};

/// Splits a generation into reasoning and answer. The output is forced to
/// begin with a line break, which is removed before parsing. Accepts
/// "<think>c</think> y" with y optionally wrapped in answer tags.
std::optional<std::pair<std::string, std::string>> split_generation(std::string_view text);

/// Questions already in the journal are loaded, not regenerated; new
/// completions are appended to it as they finish.
DistillResult distill(std::span<const RawQuestion> questions, TextBackend& generator, const DistillConfig& config);

json distilled_to_json(const DistilledRecord& r);
DistilledRecord distilled_from_json(const json& row, std::string_view where);
std::vector<DistilledRecord> read_distilled(const std::filesystem::path& path);
void write_distilled(const std::filesystem::path& path, std::span<const DistilledRecord> records);

// --- filtering -------------------------------------------------------------

enum class FilterStage { AnswerCheck, ReasoningSelection, Backend };

struct CheckVerdict {
    bool keep = false;
    std::string reason;  // empty when kept
    bool backend_failure = false;
};

/// Objective: exact numeric match (or exact string match) of the extracted
/// answer. Subjective: judge verdict must be consistent.
CheckVerdict answer_check(const DistilledRecord& record, Judge& judge);

inline constexpr std::array<std::string_view, 7> kReasoningCriteria = {
    "internal consistency",    "term overlap rate",       "number of reasoning steps",
    "logical coherence",       "content diversity",       "task-domain relevance",
    "alignment with task instructions",
};

std::string build_reasoning_prompt(const DistilledRecord& record);

struct ReasoningVerdict {
    int decision = 0;  // 1 iff all seven criteria are met
    std::array<int, 7> bits{};
    bool irregular = false;
    std::string raw;
};

/// Parses {"scores":[b1,...,b7]} with each b in {0,1}. Anything else is
/// irregular with decision 0.
ReasoningVerdict parse_reasoning_reply(std::string_view raw);

/// One judge call covering all seven criteria. Throws BackendError when the
/// backend fails after retries.
ReasoningVerdict reasoning_select(const DistilledRecord& record, TextBackend& judge, const RetryPolicy& retry = {});

struct FilterCounts {
    std::int64_t input = 0;
    std::int64_t kept = 0;
    std::int64_t rejected_answer_check = 0;
    std::int64_t rejected_reasoning = 0;
    std::int64_t backend_failures = 0;

    bool conserved() const {
        return input == kept + rejected_answer_check + rejected_reasoning + backend_failures;
    }
};

struct FilterReport {
    FilterCounts totals;
    std::map<std::string, FilterCounts> per_source;

    std::string to_text() const;
};

struct Rejection {
    std::string id;
    std::string source;
    FilterStage stage = FilterStage::AnswerCheck;
    std::string reason;
    std::optional<std::array<int, 7>> criteria;
};

struct FilterResult {
    std::vector<DistilledRecord> kept;  // input order
    std::vector<Rejection> rejected;    // input order
    FilterReport report;
};

struct FilterConfig {
    int concurrency = 8;
    RetryPolicy retry;
};

FilterResult filter_records(std::span<const DistilledRecord> records, Judge& answer_judge,
                            TextBackend& reasoning_judge, const FilterConfig& config = {});

void write_rejections(const std::filesystem::path& path, std::span<const Rejection> rejected);

// --- composition -------------------------------------------------------------

struct CompositionRow {
    std::string category;
    std::string source;
    std::int64_t count = 0;
    std::string percent;  // two decimals, no % sign
};

struct CompositionReport {
    std::int64_t total = 0;
    std::vector<CompositionRow> rows;                       // table order, empty sources omitted
    std::vector<std::pair<std::string, std::int64_t>> categories;  // rollups, table order

    std::string to_text() const;
};

/// 100 * count / total rounded half up to two decimals, by integer arithmetic.
std::string percent_2dp(std::int64_t count, std::int64_t total);

CompositionReport compose_report(const std::map<std::string, std::int64_t>& counts_by_source);
CompositionReport compose_report(std::span<const DistilledRecord> records);

}  // namespace finrl
