#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace finrl {

class Judge;

struct RewardBreakdown {
    int fmt = 0;
    int acc = 0;
    int total = 0;
};

enum class DecimalMode {
    /// Round both numbers to the smaller count of written decimal places.
    RoundToFewerPlaces,
    /// Values must be equal after normalization; no rounding.
    Exact,
};

struct EquivalenceRules {
    DecimalMode decimal_mode = DecimalMode::RoundToFewerPlaces;
    bool normalize_percent = true;
    bool strip_thousands_separators = true;
    bool strip_currency_symbols = true;

    static EquivalenceRules lenient() { return {}; }
    static EquivalenceRules exact() { return {DecimalMode::Exact, true, true, true}; }
};

/// 1 iff the text is exactly one think block followed by one answer block,
/// with only whitespace around them and no tag markers inside either block.
int format_reward(std::string_view output);

/// Content of the first answer block, trimmed. A brace-balanced \boxed{...}
/// inside it takes precedence. No answer block gives nullopt.
std::optional<std::string> extract_answer(std::string_view output);

/// The boxed-or-plain rule applied to bare answer text (no tags).
std::string extract_from_answer_text(std::string_view answer);

bool numeric_equivalent(std::string_view a, std::string_view b, const EquivalenceRules& rules = {});

/// Decimal value parsed under `rules`: digits without sign or point, the
/// count of digits after the point, and the sign. Exposed for tests.
struct DecimalValue {
    bool negative = false;
    std::string digits;
    int scale = 0;
};
std::optional<DecimalValue> parse_decimal(std::string_view text, const EquivalenceRules& rules = {});

/// Rule-based check first, then the judge. Judge failures score 0.
int accuracy_reward(std::string_view output, std::string_view solution, Judge& judge,
                    const EquivalenceRules& rules = {}, std::optional<std::string_view> question = std::nullopt);

RewardBreakdown total_reward(std::string_view output, std::string_view solution, Judge& judge,
                             const EquivalenceRules& rules = {},
                             std::optional<std::string_view> question = std::nullopt);

std::string_view trim(std::string_view s);

}  // namespace finrl
