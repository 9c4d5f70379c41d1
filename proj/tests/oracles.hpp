#pragma once

// Test-only reference computations, independent of the library code paths
// they are compared against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "finrl/grpo.hpp"
#include "finrl/policy.hpp"

namespace finrl::testing {

/// Central finite differences of `objective` with respect to every parameter.
inline std::vector<double> finite_difference_gradient(const PolicyParams& params,
                                                      const std::function<double(const PolicyParams&)>& objective,
                                                      double h = 1e-3) {
    PolicyParams probe = params;
    std::vector<double> grad(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
        const double orig = probe.values()[i];
        probe.values()[i] = orig + h;
        const double up = objective(probe);
        probe.values()[i] = orig - h;
        const double down = objective(probe);
        probe.values()[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

/// ||a - b|| / max(||a||, ||b||, tiny)
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
}

/// Tiny architecture for gradient checks (well under 5k parameters).
inline ArchConfig tiny_arch(int vocab = 12) {
    ArchConfig a;
    a.vocab_size = vocab;
    a.d_model = 8;
    a.n_layers = 2;
    a.n_heads = 2;
    a.d_hidden = 12;
    a.context = 16;
    return a;
}

/// Init with a larger scale than the default so every path carries signal.
inline PolicyParams random_params(const ArchConfig& arch, std::uint64_t seed, double scale = 0.5) {
    PolicyParams p(arch);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    for (double& v : p.values()) v = normal(rng);
    return p;
}

inline TokenIds random_ids(Rng& rng, int vocab, int n, int lo = Vocab::kNumSpecials) {
    std::uniform_int_distribution<TokenId> pick(lo, vocab - 1);
    TokenIds ids(n);
    for (auto& id : ids) id = pick(rng);
    return ids;
}

// Groups with random queries/outputs, old logprobs from `old_params`.
inline std::vector<RolloutGroup> random_groups(const PolicyParams& old_params, Rng& rng, int n_groups, int g) {
    const int vocab = old_params.arch().vocab_size;
    std::uniform_int_distribution<int> len(1, 5);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<RolloutGroup> groups;
    for (int b = 0; b < n_groups; ++b) {
        RolloutGroup group{random_ids(rng, vocab, len(rng)), {}};
        for (int i = 0; i < g; ++i) {
            Rollout ro;
            ro.output = random_ids(rng, vocab, len(rng));
            ro.old_logprobs = sequence_logprob(old_params, group.query, ro.output).per_token;
            ro.advantage = normal(rng);
            group.rollouts.push_back(std::move(ro));
        }
        groups.push_back(std::move(group));
    }
    return groups;
}

// Surrogate objective, evaluated directly from token logprobs.
inline double surrogate_objective(const PolicyParams& params, const std::vector<RolloutGroup>& groups,
                           const PolicyParams& ref, double beta, double eps) {
    double total = 0.0;
    for (const auto& group : groups) {
        double group_sum = 0.0;
        for (const auto& ro : group.rollouts) {
            const auto lp = sequence_logprob(params, group.query, ro.output).per_token;
            const auto ref_lp = sequence_logprob(ref, group.query, ro.output).per_token;
            double s = 0.0;
            for (std::size_t t = 0; t < lp.size(); ++t) {
                const double w = std::exp(lp[t] - ro.old_logprobs[t]);
                const double clipped = std::min(std::max(w, 1.0 - eps), 1.0 + eps);
                const double z = ref_lp[t] - lp[t];
                s += std::min(w * ro.advantage, clipped * ro.advantage) - beta * (std::exp(z) - z - 1.0);
            }
            group_sum += s / static_cast<double>(lp.size());
        }
        total += group_sum / static_cast<double>(group.rollouts.size());
    }
    return total / static_cast<double>(groups.size());
}

inline PolicyParams perturbed(const PolicyParams& p, std::uint64_t seed, double scale) {
    PolicyParams q = p;
    q.add_scaled(random_params(p.arch(), seed, 1.0), scale);
    return q;
}

/// The output grammar as one regular expression: optional whitespace, a
/// think block and an answer block whose bodies hold no tag, optional
/// whitespace.
inline bool oracle_format(const std::string& output) {
    static const std::regex grammar(
        R"(^\s*<think>(?:(?!</?think>|</?answer>)[\s\S])*</think>\s*<answer>(?:(?!</?think>|</?answer>)[\s\S])*</answer>\s*$)");
    return std::regex_match(output, grammar);
}

/// value = mantissa / 10^scale
struct ScaledNumber {
    __int128 mantissa = 0;
    int scale = 0;
};

inline std::optional<ScaledNumber> oracle_parse_number(std::string s) {
    static const std::regex ws_edges(R"(^\s+|\s+$)");
    s = std::regex_replace(s, ws_edges, "");
    static const std::regex shape(R"(^(\$|¥|€|£)?([+-])?(\$|¥|€|£)?(\d{1,3}(?:,\d{3})+|\d*)(?:\.(\d*))?(%)?$)");
    std::smatch m;
    if (!std::regex_match(s, m, shape)) return std::nullopt;
    std::string int_part = m[4].str();
    int_part.erase(std::remove(int_part.begin(), int_part.end(), ','), int_part.end());
    const std::string frac = m[5].str();
    if (int_part.empty() && frac.empty()) return std::nullopt;
    ScaledNumber n;
    for (char c : int_part + frac) n.mantissa = n.mantissa * 10 + (c - '0');
    n.scale = static_cast<int>(frac.size()) + (m[6].matched ? 2 : 0);
    if (m[2].str() == "-") n.mantissa = -n.mantissa;
    return n;
}

inline __int128 pow10_i128(int k) {
    __int128 p = 1;
    while (k-- > 0) p *= 10;
    return p;
}

/// Rounds half away from zero to `places` decimals.
inline ScaledNumber oracle_round(ScaledNumber n, int places) {
    if (n.scale <= places) return n;
    const __int128 div = pow10_i128(n.scale - places);
    const bool neg = n.mantissa < 0;
    const __int128 mag = neg ? -n.mantissa : n.mantissa;
    __int128 q = mag / div;
    if ((mag % div) * 2 >= div) ++q;
    return {neg ? -q : q, places};
}

/// Numeric equivalence by scaled integers: round both sides to the smaller
/// number of written decimals and compare; non-numbers compare as trimmed
/// strings.
inline bool oracle_numeric_equivalent(const std::string& a, const std::string& b) {
    const auto na = oracle_parse_number(a);
    const auto nb = oracle_parse_number(b);
    if (!na || !nb) {
        static const std::regex ws_edges(R"(^\s+|\s+$)");
        return std::regex_replace(a, ws_edges, "") == std::regex_replace(b, ws_edges, "");
    }
    const int places = std::min(na->scale, nb->scale);
    const auto ra = oracle_round(*na, places);
    const auto rb = oracle_round(*nb, places);
    return ra.mantissa == rb.mantissa;
}

}  // namespace finrl::testing
