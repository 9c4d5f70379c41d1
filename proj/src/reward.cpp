#include "finrl/reward.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include <spdlog/spdlog.h>

#include "finrl/error.hpp"
#include "finrl/judge.hpp"

namespace finrl {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";
constexpr std::string_view kBoxed = "\\boxed{";

constexpr std::array<std::string_view, 4> kTags = {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose};
constexpr std::array<std::string_view, 4> kCurrency = {"$", "\xC2\xA5", "\xE2\x82\xAC", "\xC2\xA3"};  // $ ¥ € £

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool contains_tag(std::string_view s) {
    return std::any_of(kTags.begin(), kTags.end(), [&](std::string_view t) { return s.find(t) != s.npos; });
}

std::size_t skip_space(std::string_view s, std::size_t pos) {
    while (pos < s.size() && is_space(s[pos])) ++pos;
    return pos;
}

bool consume(std::string_view s, std::size_t& pos, std::string_view token) {
    if (s.substr(pos, token.size()) != token) return false;
    pos += token.size();
    return true;
}

void strip_currency(std::string_view& s) {
    for (auto sym : kCurrency) {
        if (s.starts_with(sym)) {
            s.remove_prefix(sym.size());
            return;
        }
    }
}

std::string strip_leading_zeros(std::string digits) {
    auto first = digits.find_first_not_of('0');
    return first == std::string::npos ? std::string("0") : digits.substr(first);
}

// Round half away from zero to `places` decimals.
DecimalValue round_to(const DecimalValue& v, int places) {
    if (v.scale <= places) return v;
    const int drop = v.scale - places;
    std::string digits = v.digits;
    while (static_cast<int>(digits.size()) <= drop) digits.insert(digits.begin(), '0');
    const bool round_up = digits[digits.size() - drop] >= '5';
    digits.resize(digits.size() - drop);
    if (round_up) {
        int i = static_cast<int>(digits.size()) - 1;
        while (i >= 0 && digits[i] == '9') digits[i--] = '0';
        if (i < 0) {
            digits.insert(digits.begin(), '1');
        } else {
            ++digits[i];
        }
    }
    return {v.negative, digits, places};
}

// Compare after padding to a common scale; -0 equals 0.
bool same_value(const DecimalValue& a, const DecimalValue& b) {
    const int scale = std::max(a.scale, b.scale);
    std::string da = strip_leading_zeros(a.digits + std::string(scale - a.scale, '0'));
    std::string db = strip_leading_zeros(b.digits + std::string(scale - b.scale, '0'));
    if (da != db) return false;
    return da == "0" || a.negative == b.negative;
}

}  // namespace

std::string_view trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

int format_reward(std::string_view output) {
    std::size_t pos = skip_space(output, 0);
    if (!consume(output, pos, kThinkOpen)) return 0;
    const std::size_t think_end = output.find(kThinkClose, pos);
    if (think_end == output.npos || contains_tag(output.substr(pos, think_end - pos))) return 0;
    pos = skip_space(output, think_end + kThinkClose.size());
    if (!consume(output, pos, kAnswerOpen)) return 0;
    const std::size_t answer_end = output.find(kAnswerClose, pos);
    if (answer_end == output.npos || contains_tag(output.substr(pos, answer_end - pos))) return 0;
    pos = skip_space(output, answer_end + kAnswerClose.size());
    return pos == output.size() ? 1 : 0;
}

std::string extract_from_answer_text(std::string_view answer) {
    const std::size_t boxed = answer.find(kBoxed);
    if (boxed != answer.npos) {
        const std::size_t start = boxed + kBoxed.size();
        int depth = 1;
        for (std::size_t i = start; i < answer.size(); ++i) {
            if (answer[i] == '{') ++depth;
            if (answer[i] == '}' && --depth == 0) return std::string(trim(answer.substr(start, i - start)));
        }
        // unbalanced: the boxed marker is ignored
    }
    return std::string(trim(answer));
}

std::optional<std::string> extract_answer(std::string_view output) {
    const std::size_t open = output.find(kAnswerOpen);
    if (open == output.npos) return std::nullopt;
    const std::size_t start = open + kAnswerOpen.size();
    const std::size_t close = output.find(kAnswerClose, start);
    if (close == output.npos) return std::nullopt;
    return extract_from_answer_text(output.substr(start, close - start));
}

std::optional<DecimalValue> parse_decimal(std::string_view text, const EquivalenceRules& rules) {
    std::string_view s = trim(text);
    DecimalValue v;
    if (rules.strip_currency_symbols) strip_currency(s);
    if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
        v.negative = s.front() == '-';
        s.remove_prefix(1);
    }
    if (rules.strip_currency_symbols) strip_currency(s);
    bool percent = false;
    if (rules.normalize_percent && !s.empty() && s.back() == '%') {
        percent = true;
        s.remove_suffix(1);
    }

    bool seen_point = false;
    int int_digits = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (is_digit(c)) {
            v.digits += c;
            if (seen_point) {
                ++v.scale;
            } else {
                ++int_digits;
            }
        } else if (c == '.' && !seen_point) {
            seen_point = true;
        } else if (c == ',' && rules.strip_thousands_separators && !seen_point && int_digits > 0) {
            // a separator must be followed by exactly three digits
            for (std::size_t k = 1; k <= 3; ++k) {
                if (i + k >= s.size() || !is_digit(s[i + k])) return std::nullopt;
            }
            if (i + 4 < s.size() && is_digit(s[i + 4])) return std::nullopt;
        } else {
            return std::nullopt;
        }
    }
    if (v.digits.empty()) return std::nullopt;
    if (percent) v.scale += 2;
    return v;
}

bool numeric_equivalent(std::string_view a, std::string_view b, const EquivalenceRules& rules) {
    const auto va = parse_decimal(a, rules);
    const auto vb = parse_decimal(b, rules);
    if (!va || !vb) return trim(a) == trim(b);
    if (rules.decimal_mode == DecimalMode::Exact) return same_value(*va, *vb);
    const int places = std::min(va->scale, vb->scale);
    return same_value(round_to(*va, places), round_to(*vb, places));
}

int accuracy_reward(std::string_view output, std::string_view solution, Judge& judge, const EquivalenceRules& rules,
                    std::optional<std::string_view> question) {
    if (trim(solution).empty()) throw InvalidArgument("accuracy_reward: empty solution");
    const auto answer = extract_answer(output);
    if (!answer) return 0;
    if (numeric_equivalent(*answer, solution, rules)) return 1;
    try {
        JudgeRequest request;
        if (question) request.question = std::string(*question);
        request.model_answer = *answer;
        request.ground_truth = std::string(trim(solution));
        return judge.judge(request).parsed == Verdict::Consistent ? 1 : 0;
    } catch (const BackendError& e) {
        spdlog::warn("accuracy judge failed, scoring 0: {}", e.what());
        return 0;
    }
}

RewardBreakdown total_reward(std::string_view output, std::string_view solution, Judge& judge,
                             const EquivalenceRules& rules, std::optional<std::string_view> question) {
    RewardBreakdown r;
    r.fmt = format_reward(output);
    r.acc = accuracy_reward(output, solution, judge, rules, question);
    r.total = r.fmt + r.acc;
    return r;
}

}  // namespace finrl
