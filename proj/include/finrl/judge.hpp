#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "finrl/backend.hpp"
#include "finrl/reward.hpp"

namespace finrl {

/// Answer-check prompt layouts compared by the judge benchmark.
enum class PromptFormat {
    OF,     // rules first, then the judged content, then the output format
    CIE,    // judged content at the end
    WQ,     // OF plus the original question
    CIE_WQ, // CIE plus the original question
    ZH,     // OF in Chinese
};

std::string_view format_id(PromptFormat format);
PromptFormat parse_prompt_format(std::string_view id);
const std::vector<PromptFormat>& all_prompt_formats();
bool format_needs_question(PromptFormat format);

/// Deterministic rendering; throws InvalidArgument when a required slot is
/// missing or empty.
std::string render_judge_prompt(PromptFormat format, std::string_view ground_truth, std::string_view model_answer,
                                std::optional<std::string_view> question = std::nullopt);

enum class Verdict { Inconsistent = 0, Consistent = 1, Irregular = 2 };

struct JudgeVerdict {
    std::string raw;
    Verdict parsed = Verdict::Irregular;
};

/// "1" or "0" after trimming whitespace; anything else is irregular.
JudgeVerdict parse_verdict(std::string_view raw);

struct JudgeRequest {
    std::optional<std::string> question;
    std::string model_answer;
    std::string ground_truth;
};

/// Binary consistency judge. Implementations are safe for concurrent use.
class Judge {
public:
    virtual ~Judge() = default;
    /// Throws BackendError when no verdict could be obtained.
    virtual JudgeVerdict judge(const JudgeRequest& request) = 0;
};

/// Local judge: an override table keyed by (model answer, ground truth),
/// falling back to numeric_equivalent.
class MockJudge : public Judge {
public:
    explicit MockJudge(EquivalenceRules rules = {}) : rules_(rules) {}

    void set(std::string model_answer, std::string ground_truth, Verdict verdict);
    JudgeVerdict judge(const JudgeRequest& request) override;

private:
    EquivalenceRules rules_;
    std::map<std::pair<std::string, std::string>, Verdict> table_;
};

/// Judge backed by a text backend and one of the prompt formats.
class BackendJudge : public Judge {
public:
    BackendJudge(TextBackend& backend, PromptFormat format = PromptFormat::OF, RetryPolicy retry = {},
                 double temperature = 0.0);

    JudgeVerdict judge(const JudgeRequest& request) override;

private:
    TextBackend& backend_;
    PromptFormat format_;
    RetryPolicy retry_;
    double temperature_;
};

}  // namespace finrl
