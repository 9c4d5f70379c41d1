#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "finrl/lexicon.hpp"
#include "finrl/policy.hpp"

namespace finrl {

/// One supervised example: query x and the output o assembled from a
/// reasoning trace c and an answer y.
struct SftRecord {
    std::string query;
    std::string think;
    std::string answer;

    /// "<think>" + think + "</think>" + "<answer>" + answer + "</answer>"
    std::string output() const;
};

/// Throws InvalidArgument naming the record when a field is empty or the
/// assembled output fails the format reward.
void validate_record(const SftRecord& record, std::string_view name);

std::vector<SftRecord> read_sft_jsonl(const std::filesystem::path& path);
void write_sft_jsonl(const std::filesystem::path& path, std::span<const SftRecord> records);

/// Query and output token ids; the output ends with EOS.
struct EncodedExample {
    TokenIds query;
    TokenIds output;
};

EncodedExample encode_example(const Vocab& vocab, const SftRecord& record);

struct LossAndGrad {
    double loss = 0.0;
    Gradient grad;
};

/// Summed negative log-likelihood of the outputs given their queries, with
/// its gradient. Only output tokens are scored.
LossAndGrad sft_loss_and_grad(const PolicyParams& params, std::span<const EncodedExample> batch);

/// Checks every record and encodes it, then delegates to the encoded overload.
LossAndGrad sft_loss_and_grad(const PolicyParams& params, const Vocab& vocab, std::span<const SftRecord> batch);

/// Mean per-token cross-entropy (nats), used for held-out evaluation.
double mean_token_cross_entropy(const PolicyParams& params, std::span<const EncodedExample> examples);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    AdamConfig config;
    PolicyParams m;
    PolicyParams v;
    std::int64_t step = 0;

    static OptimizerState fresh(const PolicyParams& like, const AdamConfig& config);
};

struct AdamResult {
    PolicyParams params;
    OptimizerState state;
};

/// One bias-corrected Adam descent step. Throws (leaving inputs untouched)
/// when the gradient contains NaN or Inf.
AdamResult adam_step(const OptimizerState& state, const PolicyParams& params, const Gradient& grad);

/// In-place variant used by the training loops.
void adam_step_inplace(OptimizerState& state, PolicyParams& params, const Gradient& grad);

struct SftConfig {
    int steps = 500;
    int batch_size = 16;
    AdamConfig adam;
};

struct SftResult {
    PolicyParams params;
    std::vector<double> loss_curve;  // batch loss before each update
};

/// Adam on the summed cross-entropy. Batches are drawn from a per-epoch
/// shuffle seeded by `seed`; the trailing partial batch is dropped.
SftResult train_sft(const PolicyParams& init, const Vocab& vocab, std::span<const SftRecord> dataset,
                    const SftConfig& config, std::uint64_t seed);

void write_loss_csv(const std::filesystem::path& path, std::span<const double> curve);

}  // namespace finrl
