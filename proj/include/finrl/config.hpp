#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "finrl/backend.hpp"
#include "finrl/foundry.hpp"
#include "finrl/grpo.hpp"
#include "finrl/jsonl.hpp"
#include "finrl/judge.hpp"
#include "finrl/judge_bench.hpp"
#include "finrl/policy.hpp"
#include "finrl/sft.hpp"

namespace finrl {

/// Where a text backend comes from.
///
/// kind "http" posts to `url`; "replay" answers from a JSONL file of
/// {prompt, reply} rows; "rule" is only valid for the answer judge and uses
/// local numeric equivalence.
struct BackendSpec {
    std::string kind = "rule";
    std::string id;
    std::string url;
    std::string token_env = "FINRL_BACKEND_TOKEN";
    std::filesystem::path replay;
    int timeout_s = 120;
};

struct PathsConfig {
    std::filesystem::path out_dir = "runs";
    std::filesystem::path vocab;
    std::filesystem::path sft_data;
    std::filesystem::path rl_data;
    std::filesystem::path eval_data;
    std::filesystem::path raw_questions;
    std::filesystem::path distilled;
    std::filesystem::path checkpoint;
    std::filesystem::path judge_fixture;
    std::filesystem::path journal;  // empty: <out_dir>/distill_journal.jsonl
};

struct SynthConfig {
    int count = 2400;
    int difficulty = 1;
    int eval_percent = 10;
};

struct EvalConfig {
    double temperature = 0.6;
    int max_len = 48;
    int limit = 200;  // 0 keeps every record
};

/// The resolved run configuration. Every section has defaults; only the seed
/// must be given.
struct RunConfig {
    std::optional<std::uint64_t> seed;
    PathsConfig paths;
    ArchConfig arch{0, 32, 1, 2, 64, 96};
    SftConfig sft;
    GrpoConfig grpo;
    SynthConfig synth;
    EvalConfig eval;
    DistillConfig distill;
    FilterConfig filter;
    ExperimentConfig judge_bench;
    int min_frequency = 1;
    BackendSpec generator;
    BackendSpec answer_judge;
    BackendSpec reasoning_judge;
    std::vector<BackendSpec> bench_backends;

    json to_json() const;
    static RunConfig from_json(const json& tree);
};

/// The full default tree; config files are merged onto it.
json default_config_tree();

/// Merges `patch` into `base`; objects merge key by key, anything else
/// replaces. Keys unknown to `base` are rejected.
void merge_config(json& base, const json& patch, const std::string& where = "");

/// "a.b.c=value"; the value is parsed as JSON and falls back to a string.
void apply_override(json& tree, const std::string& assignment);

json load_config_file(const std::filesystem::path& path);

/// Owns a backend built from a spec.
std::unique_ptr<TextBackend> make_backend(const BackendSpec& spec);

/// A judge together with whatever backend it talks to.
struct JudgeHandle {
    std::unique_ptr<TextBackend> backend;
    std::unique_ptr<Judge> judge;
};
JudgeHandle make_judge(const BackendSpec& spec, const RetryPolicy& retry, const EquivalenceRules& rules = {});

}  // namespace finrl
