#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "finrl/lexicon.hpp"
#include "finrl/policy.hpp"
#include "finrl/reward.hpp"
#include "finrl/sft.hpp"

namespace finrl {

class Judge;

/// Objective question with a checkable solution. `id` and `source` are
/// optional bookkeeping used for splitting and stratified sampling.
struct RlRecord {
    std::string question;
    std::string solution;
    std::string id;
    std::string source;
};

void validate_rl_record(const RlRecord& record, std::string_view name);
std::vector<RlRecord> read_rl_jsonl(const std::filesystem::path& path);
void write_rl_jsonl(const std::filesystem::path& path, std::span<const RlRecord> records);

/// Gradient weight used on tokens of the clipped surrogate.
enum class ClipGradient {
    /// Derivative of min(wA, clip(w)A): w*A, or 0 where the clipped branch is
    /// active and smaller.
    Surrogate,
    /// min(wA, clip(w)A) itself multiplies grad log pi on every token.
    ObjectiveWeight,
};

struct GrpoConfig {
    int iterations = 100;  // minibatch steps
    int inner_steps = 4;   // updates against one set of frozen rollouts
    int group_size = 8;
    double clip_eps = 0.2;
    double beta = 0.04;
    double std_eps = 1e-8;
    double lr = 1e-4;
    double temperature = 0.6;
    int max_len = 48;
    int minibatch = 16;
    std::uint64_t seed = 0;
    bool use_adam = false;
    AdamConfig adam;
    ClipGradient clip_gradient = ClipGradient::Surrogate;
    EquivalenceRules rules;
    int concurrency = 1;

    void validate() const;
};

struct Rollout {
    TokenIds output;
    std::string text;
    std::vector<double> old_logprobs;
    std::vector<double> ref_logprobs;  // optional cache; computed on demand when empty
    RewardBreakdown reward;
    double advantage = 0.0;
};

struct RolloutGroup {
    TokenIds query;
    std::vector<Rollout> rollouts;
};

/// A_i = (r_i - mean) / max(std_eps, population std). Needs at least two rewards.
std::vector<double> group_advantages(std::span<const double> rewards, double std_eps);

/// exp(new - old).
double importance_ratio(double new_logprob, double old_logprob);

/// min(w*A, clip(w, 1-eps, 1+eps)*A).
double clipped_term(double w, double advantage, double clip_eps);

/// True where the clipped branch is strictly the smaller one.
bool clip_active(double w, double advantage, double clip_eps);

/// exp(ref - cur) - (ref - cur) - 1, always >= 0.
double kl_estimate(double logprob, double ref_logprob);

struct KlResult {
    std::vector<double> per_token;
    double mean = 0.0;
    Gradient grad;  // d(mean over tokens)/d theta
};

KlResult kl_term_and_grad(const PolicyParams& params, const PolicyParams& ref, std::span<const TokenId> query,
                          std::span<const TokenId> output);

struct GrpoGradient {
    Gradient grad;
    double mean_kl = 0.0;    // token-averaged per output, then averaged
    double clip_frac = 0.0;  // fraction of tokens with the clipped branch active
};

/// Ascent direction of the clipped surrogate minus beta times the KL term,
/// averaged over groups, rollouts in a group, and tokens of a rollout.
GrpoGradient grpo_gradient(const PolicyParams& params, std::span<const RolloutGroup> groups, const PolicyParams& ref,
                           const GrpoConfig& config);

/// Samples one group of rollouts from `old_params` and scores it.
RolloutGroup sample_group(const PolicyParams& old_params, const Vocab& vocab, const RlRecord& record, Judge& judge,
                          const GrpoConfig& config, std::uint64_t step, std::uint64_t record_index);

struct GrpoMetrics {
    int iteration = 0;
    int step = 0;
    double mean_fmt = 0.0;
    double mean_acc = 0.0;
    double mean_total = 0.0;
    double mean_advantage = 0.0;
    double mean_kl = 0.0;
    double clip_frac = 0.0;
};

struct GrpoStepResult {
    PolicyParams params;
    std::vector<GrpoMetrics> metrics;  // one per inner update
};

/// Freezes theta_old = params, samples G rollouts per record, computes
/// advantages and applies `inner_steps` ascent updates. `step` selects the
/// rollout RNG streams.
GrpoStepResult grpo_step(const PolicyParams& params, const Vocab& vocab, std::span<const RlRecord> minibatch,
                         const PolicyParams& ref, const GrpoConfig& config, Judge& judge, std::uint64_t step,
                         OptimizerState* adam_state = nullptr);

struct GrpoResult {
    PolicyParams params;
    std::vector<GrpoMetrics> metrics;  // iterations * inner_steps rows
};

using GrpoProgress = std::function<void(const GrpoMetrics&)>;

/// Reference policy is the starting snapshot for the whole run.
GrpoResult train_grpo(const PolicyParams& sft, const Vocab& vocab, std::span<const RlRecord> dataset,
                      const GrpoConfig& config, Judge& judge, const GrpoProgress& progress = {});

void write_metrics_csv(const std::filesystem::path& path, std::span<const GrpoMetrics> metrics);

struct RewardSummary {
    double mean_fmt = 0.0;
    double mean_acc = 0.0;
    double mean_total = 0.0;
    int n = 0;
};

/// Mean rewards of one generation per record. temperature <= 0 decodes
/// greedily; otherwise record i samples from its own stream of `seed`.
RewardSummary evaluate_rewards(const PolicyParams& params, const Vocab& vocab, std::span<const RlRecord> records,
                               Judge& judge, double temperature, int max_len, std::uint64_t seed,
                               const EquivalenceRules& rules = {});

}  // namespace finrl
