#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "finrl/error.hpp"
#include "finrl/lexicon.hpp"

namespace finrl {

/// Shape of the causal transformer policy.
struct ArchConfig {
    int vocab_size = 0;
    int d_model = 32;
    int n_layers = 1;
    int n_heads = 2;
    int d_hidden = 64;
    int context = 64;

    void validate() const;
    bool operator==(const ArchConfig&) const = default;
};

/// Offsets of every named tensor inside the flat parameter buffer.
///
/// Matrices are row-major with shape [in x out] so a row vector x maps to x*W.
struct ParamLayout {
    struct Block {
        std::size_t norm1, wq, wk, wv, wo, norm2, w1, b1, w2, b2;
    };
    std::size_t tok_emb = 0;
    std::size_t pos_emb = 0;
    std::vector<Block> blocks;
    std::size_t norm_final = 0;
    std::size_t w_out = 0;
    std::size_t total = 0;

    explicit ParamLayout(const ArchConfig& arch);
};

/// All trainable weights of the policy, stored flat with their shape header.
///
/// Gradients use the same type: a gradient is a PolicyParams whose values are
/// partial derivatives, and it must share the shape header of the params.
class PolicyParams {
public:
    static constexpr int kFormatVersion = 1;

    PolicyParams() = default;
    /// All-zero parameters (including norm gains): the uniform policy.
    explicit PolicyParams(const ArchConfig& arch);

    const ArchConfig& arch() const { return arch_; }
    const ParamLayout& layout() const { return layout_; }
    std::size_t count() const { return values_.size(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    bool same_shape(const PolicyParams& other) const { return arch_ == other.arch_; }
    bool all_finite() const;

    /// this += scale * other
    void add_scaled(const PolicyParams& other, double scale);
    void fill(double v);

    void save(const std::filesystem::path& path) const;
    static PolicyParams load(const std::filesystem::path& path);

    bool operator==(const PolicyParams& other) const {
        return arch_ == other.arch_ && values_ == other.values_;
    }

private:
    ArchConfig arch_;
    ParamLayout layout_{ArchConfig{1, 1, 0, 1, 1, 1}};
    std::vector<double> values_;
};

using Gradient = PolicyParams;

/// Closed-form parameter count for an architecture.
std::size_t param_count(const ArchConfig& arch);

/// Weights ~ N(0, 0.02^2), biases zero, norm gains one.
PolicyParams init_params(const ArchConfig& arch, std::uint64_t seed);

/// Next-token log-probabilities over the whole vocabulary.
struct TokenDistribution {
    std::vector<double> logprobs;
};

struct SequenceLogprob {
    std::vector<double> per_token;
    double total = 0.0;
};

/// One (position, target, weight) term of a weighted log-likelihood.
struct PositionWeight {
    int position;
    TokenId target;
    double weight;
};

/// Cached activations of one causal window. Rows can be appended one at a
/// time (incremental decoding) or all at once (teacher forcing); both paths
/// run the same kernels so their outputs agree bit for bit.
class Activations {
public:
    explicit Activations(const PolicyParams& params);

    void append(std::span<const TokenId> ids);
    int length() const { return static_cast<int>(ids_.size()); }
    std::span<const double> logprobs(int position) const;

    /// Accumulates d/dtheta of sum_k weight_k * logprob(position_k, target_k).
    void backward(std::span<const PositionWeight> terms, Gradient& grad) const;

private:
    struct LayerCache {
        std::vector<double> x_in, r1, n1, xn1, q, k, v, att, o, x_mid, r2, n2, xn2, hpre, hact;
    };
    const PolicyParams* params_;
    TokenIds ids_;
    std::vector<LayerCache> layers_;
    std::vector<double> x_last_, rf_, nf_, xnf_, logp_;
};

/// Log-probabilities of the next token after `context` (which the caller
/// starts with BOS). Keeps only the newest `arch.context` tokens.
TokenDistribution forward_logprobs(const PolicyParams& params, std::span<const TokenId> context);

/// Full conditioning prefix: BOS, then the query tokens verbatim.
TokenIds conditioning_prefix(std::span<const TokenId> query);

/// Per-token log pi(o_t | x, o_<t) and their sum.
SequenceLogprob sequence_logprob(const PolicyParams& params, std::span<const TokenId> query,
                                 std::span<const TokenId> output);

/// Gradient of sum_t weights[t] * log pi(o_t | x, o_<t).
Gradient backward(const PolicyParams& params, std::span<const TokenId> query,
                  std::span<const TokenId> output, std::span<const double> weights);

/// Same as backward() but adds into `grad`; returns the per-token logprobs
/// computed on the way.
SequenceLogprob accumulate_backward(const PolicyParams& params, std::span<const TokenId> query,
                                    std::span<const TokenId> output, std::span<const double> weights,
                                    Gradient& grad);

/// Forward pass that hands per-token logprobs to `make_weights`, then
/// backpropagates the weights it returns. Saves a second forward when the
/// weights depend on the current logprobs (importance ratios, KL terms).
template <typename WeightFn>
SequenceLogprob weighted_backward(const PolicyParams& params, std::span<const TokenId> query,
                                  std::span<const TokenId> output, WeightFn&& make_weights,
                                  Gradient& grad);

using Rng = std::mt19937_64;

struct SampleConfig {
    double temperature = 1.0;
    int max_len = 32;
};

/// Temperature sampling; stops after EOS (which is kept) or max_len tokens.
TokenIds sample(const PolicyParams& params, std::span<const TokenId> query, const SampleConfig& config,
                Rng& rng);

/// Argmax decoding, ties to the lower id.
TokenIds greedy_decode(const PolicyParams& params, std::span<const TokenId> query, int max_len);

// --- implementation details for weighted_backward -------------------------

namespace detail {
bool fits_single_window(const PolicyParams& params, std::size_t query_len, std::size_t output_len);
void check_sequence(const PolicyParams& params, std::span<const TokenId> query,
                    std::span<const TokenId> output);
TokenIds teacher_forced_inputs(std::span<const TokenId> query, std::span<const TokenId> output);
}  // namespace detail

template <typename WeightFn>
SequenceLogprob weighted_backward(const PolicyParams& params, std::span<const TokenId> query,
                                  std::span<const TokenId> output, WeightFn&& make_weights,
                                  Gradient& grad) {
    detail::check_sequence(params, query, output);
    if (!grad.same_shape(params)) throw InvalidArgument("gradient shape does not match params");
    const int offset = static_cast<int>(query.size());
    SequenceLogprob result;
    result.per_token.resize(output.size());

    if (detail::fits_single_window(params, query.size(), output.size())) {
        Activations acts(params);
        acts.append(detail::teacher_forced_inputs(query, output));
        for (std::size_t t = 0; t < output.size(); ++t) {
            result.per_token[t] = acts.logprobs(offset + static_cast<int>(t))[output[t]];
            result.total += result.per_token[t];
        }
        std::vector<double> weights = make_weights(std::span<const double>(result.per_token));
        std::vector<PositionWeight> terms;
        for (std::size_t t = 0; t < output.size(); ++t) {
            if (weights[t] != 0.0) terms.push_back({offset + static_cast<int>(t), output[t], weights[t]});
        }
        if (!terms.empty()) acts.backward(terms, grad);
        return result;
    }

    // Longer than the context window: one truncated window per output token.
    TokenIds prefix = conditioning_prefix(query);
    const auto window = static_cast<std::size_t>(params.arch().context);
    std::vector<TokenIds> windows;
    for (std::size_t t = 0; t < output.size(); ++t) {
        std::size_t start = prefix.size() > window ? prefix.size() - window : 0;
        windows.emplace_back(prefix.begin() + static_cast<std::ptrdiff_t>(start), prefix.end());
        Activations acts(params);
        acts.append(windows.back());
        result.per_token[t] = acts.logprobs(acts.length() - 1)[output[t]];
        result.total += result.per_token[t];
        prefix.push_back(output[t]);
    }
    std::vector<double> weights = make_weights(std::span<const double>(result.per_token));
    for (std::size_t t = 0; t < output.size(); ++t) {
        if (weights[t] == 0.0) continue;
        Activations acts(params);
        acts.append(windows[t]);
        PositionWeight term{acts.length() - 1, output[t], weights[t]};
        acts.backward(std::span(&term, 1), grad);
    }
    return result;
}

}  // namespace finrl
