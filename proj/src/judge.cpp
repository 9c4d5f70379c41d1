#include "finrl/judge.hpp"

#include <array>

#include "finrl/error.hpp"

namespace finrl {

namespace {

constexpr std::string_view kRoleEn =
    "You are a scoring assistant. Your task is to judge whether a model answer is consistent with the "
    "ground truth answer of a financial question.\n";

constexpr std::string_view kRulesEn =
    "Rules:\n"
    "1. Judge only the final result, not the wording or the supporting explanation.\n"
    "2. Numbers that are mathematically equal are consistent.\n"
    "3. A difference in decimal precision is consistent when the less precise value is the correct rounding "
    "of the more precise one (for example 0.2857 and 0.29).\n"
    "4. Alternative numeric representations are consistent: percentages and decimals (5% and 0.05), "
    "thousands separators (1,000 and 1000), currency symbols and trailing zeros (1000.0 and 1000).\n"
    "5. Any other difference in value, sign, unit or meaning is inconsistent.\n";

constexpr std::string_view kOutputEn =
    "Output format:\n"
    "Reply with a single character: 1 if the model answer is consistent with the ground truth, 0 otherwise. "
    "Do not output anything else.\n";

constexpr std::string_view kRoleZh = "你是一名评分助手。你的任务是判断模型答案与一道金融题目的标准答案是否一致。\n";

constexpr std::string_view kRulesZh =
    "规则：\n"
    "1. 只判断最终结果，不考虑措辞或解释过程。\n"
    "2. 数学上相等的数值视为一致。\n"
    "3. 小数位数不同时，若精度较低的数值是精度较高数值的正确舍入（例如 0.2857 与 0.29），视为一致。\n"
    "4. 不同的数值表示方式视为一致：百分数与小数（5% 与 0.05）、千位分隔符（1,000 与 1000）、"
    "货币符号及末尾的零（1000.0 与 1000）。\n"
    "5. 数值、符号、单位或含义上的其他差异均视为不一致。\n";

constexpr std::string_view kOutputZh = "输出格式：\n只输出一个字符：一致输出 1，不一致输出 0。不要输出任何其他内容。\n";

struct Slots {
    std::string_view ground_truth;
    std::string_view model_answer;
    std::optional<std::string_view> question;
};

std::string input_section(const Slots& s, bool chinese, bool with_question) {
    std::string out = chinese ? "输入：\n" : "Input:\n";
    if (with_question) out += std::string(chinese ? "问题：" : "Question: ") + std::string(*s.question) + "\n";
    out += std::string(chinese ? "标准答案：" : "Ground truth: ") + std::string(s.ground_truth) + "\n";
    out += std::string(chinese ? "模型答案：" : "Model answer: ") + std::string(s.model_answer) + "\n";
    return out;
}

}  // namespace

std::string_view format_id(PromptFormat format) {
    switch (format) {
        case PromptFormat::OF: return "OF";
        case PromptFormat::CIE: return "CIE";
        case PromptFormat::WQ: return "WQ";
        case PromptFormat::CIE_WQ: return "CIE-WQ";
        case PromptFormat::ZH: return "ZH";
    }
    return "?";
}

PromptFormat parse_prompt_format(std::string_view id) {
    for (auto f : all_prompt_formats()) {
        if (format_id(f) == id) return f;
    }
    throw InvalidArgument("unknown prompt format '" + std::string(id) + "'");
}

const std::vector<PromptFormat>& all_prompt_formats() {
    static const std::vector<PromptFormat> formats = {PromptFormat::OF, PromptFormat::CIE, PromptFormat::WQ,
                                                      PromptFormat::CIE_WQ, PromptFormat::ZH};
    return formats;
}

bool format_needs_question(PromptFormat format) {
    return format == PromptFormat::WQ || format == PromptFormat::CIE_WQ;
}

std::string render_judge_prompt(PromptFormat format, std::string_view ground_truth, std::string_view model_answer,
                                std::optional<std::string_view> question) {
    if (trim(ground_truth).empty()) throw InvalidArgument("judge prompt: ground truth slot is empty");
    if (trim(model_answer).empty()) throw InvalidArgument("judge prompt: model answer slot is empty");
    const bool with_question = format_needs_question(format);
    if (with_question && (!question || trim(*question).empty())) {
        throw InvalidArgument("judge prompt: format " + std::string(format_id(format)) + " requires the question");
    }
    const Slots slots{ground_truth, model_answer, question};
    std::string out;
    switch (format) {
        case PromptFormat::OF:
        case PromptFormat::WQ:
            out += kRoleEn;
            out += "\n";
            out += kRulesEn;
            out += "\n";
            out += input_section(slots, false, with_question);
            out += "\n";
            out += kOutputEn;
            break;
        case PromptFormat::CIE:
        case PromptFormat::CIE_WQ:
            out += kRoleEn;
            out += "\n";
            out += kRulesEn;
            out += "\n";
            out += kOutputEn;
            out += "\n";
            out += input_section(slots, false, with_question);
            break;
        case PromptFormat::ZH:
            out += kRoleZh;
            out += "\n";
            out += kRulesZh;
            out += "\n";
            out += input_section(slots, true, false);
            out += "\n";
            out += kOutputZh;
            break;
    }
    return out;
}

JudgeVerdict parse_verdict(std::string_view raw) {
    JudgeVerdict v{std::string(raw), Verdict::Irregular};
    const auto t = trim(raw);
    if (t == "1") v.parsed = Verdict::Consistent;
    if (t == "0") v.parsed = Verdict::Inconsistent;
    return v;
}

void MockJudge::set(std::string model_answer, std::string ground_truth, Verdict verdict) {
    table_[{std::move(model_answer), std::move(ground_truth)}] = verdict;
}

JudgeVerdict MockJudge::judge(const JudgeRequest& request) {
    auto it = table_.find({request.model_answer, request.ground_truth});
    if (it != table_.end()) {
        const char* raw = it->second == Verdict::Consistent ? "1" : it->second == Verdict::Inconsistent ? "0" : "?";
        return {raw, it->second};
    }
    return numeric_equivalent(request.model_answer, request.ground_truth, rules_) ? JudgeVerdict{"1", Verdict::Consistent}
                                                                                   : JudgeVerdict{"0", Verdict::Inconsistent};
}

BackendJudge::BackendJudge(TextBackend& backend, PromptFormat format, RetryPolicy retry, double temperature)
    : backend_(backend), format_(format), retry_(retry), temperature_(temperature) {}

JudgeVerdict BackendJudge::judge(const JudgeRequest& request) {
    std::optional<std::string_view> question;
    if (request.question) question = *request.question;
    GenerationRequest gen;
    gen.prompt = render_judge_prompt(format_, request.ground_truth, request.model_answer, question);
    gen.temperature = temperature_;
    gen.max_tokens = 8;
    return parse_verdict(generate_with_retries(backend_, gen, retry_).text);
}

}  // namespace finrl
