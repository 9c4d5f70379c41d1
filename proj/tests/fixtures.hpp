#pragma once

// Hand-labelled fixtures shared by the unit tests and the acceptance run.

#include <cstdint>
#include <map>
#include <string>

namespace finrl::testing {

struct FormatCase {
    const char* text;
    int expected;
};

inline const FormatCase kFormatCases[] = {
    {"<think>a</think><answer>b</answer>", 1},
    {"  <think>a</think>\n<answer>b</answer>\n", 1},
    {"<think></think><answer></answer>", 1},
    {"<think>multi\nline</think> \t <answer>\\boxed{0}</answer>", 1},
    {"<think>a < b and c > d</think><answer>x</answer>", 1},
    {"<think>look: <thin</think><answer>x</answer>", 1},
    {"<answer>b</answer><think>a</think>", 0},
    {"ok <think>a</think><answer>b</answer>", 0},
    {"<think>a</think><answer>b</answer> trailing", 0},
    {"<think>a</think>between<answer>b</answer>", 0},
    {"<think>a</think><think>a</think><answer>b</answer>", 0},
    {"<think>a</think><answer>b</answer><answer>c</answer>", 0},
    {"<think>a <think>x</think></think><answer>b</answer>", 0},
    {"<think>a</think><answer>b <answer>c</answer></answer>", 0},
    {"<think>a <answer>x</answer></think><answer>b</answer>", 0},
    {"<think>a</think><answer>b</think></answer>", 0},
    {"<think>a</think>", 0},
    {"<answer>b</answer>", 0},
    {"<think>a<answer>b</answer>", 0},
    {"<think>a</think><answer>b", 0},
    {"", 0},
    {"no tags at all", 0},
    {"<THINK>a</THINK><ANSWER>b</ANSWER>", 0},
    {"<think>a</think><answer>b</answer><think>", 0},
};

struct NumericCase {
    const char* a;
    const char* b;
    bool expected;
};

inline const NumericCase kNumericCases[] = {
    {"0.2857", "0.29", true},
    {"5%", "0.05", true},
    {"1,000", "1000.0", true},
    {"$1,234.50", "1234.5", true},
    {"-3", "-3.0", true},
    {"12.5%", "0.125", true},
    {" 42 ", "42", true},
    {"0.285", "0.29", true},  // half rounds away from zero
    {"-0.285", "-0.29", true},
    {"100", "1e2", false},
    {"0.2857", "0.28", false},
    {"5%", "5", false},
    {"1,000", "100", false},
    {"-3", "3", false},
    {"12,34", "1234", false},
    {"abc", "abd", false},
    {"1.5", "2", true},  // rounded to zero decimals both are 2
    {"1.4", "2", false},
    {"B", "B", true},
    {"B", " b", false},
};

/// Training-corpus counts per source, from the published composition table.
inline const std::map<std::string, std::int64_t>& composition_counts() {
    static const std::map<std::string, std::int64_t> counts = {
        {"FinanceQT", 152},   {"Finance-500K", 11300}, {"FinanceIQ", 2596}, {"FinPEE", 179},
        {"Ant-Finance", 1548}, {"FinCorpus", 29288},   {"FinQA", 2948},     {"ConvFinQA", 7629},
        {"TFNS", 2451},       {"FinCUGE", 2000},
    };
    return counts;
}

}  // namespace finrl::testing
