#include "finrl/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>

#include "finrl/backend.hpp"
#include "finrl/error.hpp"
#include "finrl/jsonl.hpp"

namespace finrl {

void validate_rl_record(const RlRecord& record, std::string_view name) {
    const std::string where(name);
    if (trim(record.question).empty()) throw InvalidArgument(where + ": empty question");
    const auto solution = trim(record.solution);
    if (solution.empty()) throw InvalidArgument(where + ": empty solution");
    // a solution must be a number or a single exact-match token
    if (!parse_decimal(solution) && solution.find_first_of(" \t\n") != std::string_view::npos) {
        throw InvalidArgument(where + ": solution is neither a number nor a single token");
    }
}

std::vector<RlRecord> read_rl_jsonl(const std::filesystem::path& path) {
    std::vector<RlRecord> out;
    int line = 0;
    for (const auto& row : read_jsonl(path)) {
        const std::string where = path.string() + " record " + std::to_string(++line);
        RlRecord r;
        r.question = required_field<std::string>(row, "question", where);
        r.solution = required_field<std::string>(row, "solution", where);
        r.id = row.value("id", std::string());
        r.source = row.value("source", std::string());
        validate_rl_record(r, where);
        out.push_back(std::move(r));
    }
    return out;
}

void write_rl_jsonl(const std::filesystem::path& path, std::span<const RlRecord> records) {
    std::vector<json> rows;
    for (const auto& r : records) {
        json row = {{"question", r.question}, {"solution", r.solution}};
        if (!r.id.empty()) row["id"] = r.id;
        if (!r.source.empty()) row["source"] = r.source;
        rows.push_back(std::move(row));
    }
    write_jsonl(path, rows);
}

void GrpoConfig::validate() const {
    if (iterations < 0) throw InvalidArgument("grpo: iterations must be >= 0");
    if (inner_steps < 1) throw InvalidArgument("grpo: inner_steps must be >= 1");
    if (group_size < 2) throw InvalidArgument("grpo: group_size must be >= 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw InvalidArgument("grpo: clip_eps must be in (0,1)");
    if (!(beta >= 0.0)) throw InvalidArgument("grpo: beta must be >= 0");
    if (!(std_eps > 0.0)) throw InvalidArgument("grpo: std_eps must be > 0");
    if (!(lr > 0.0)) throw InvalidArgument("grpo: lr must be > 0");
    if (!(temperature > 0.0)) throw InvalidArgument("grpo: temperature must be > 0");
    if (max_len < 1) throw InvalidArgument("grpo: max_len must be >= 1");
    if (minibatch < 1) throw InvalidArgument("grpo: minibatch must be >= 1");
    if (concurrency < 1) throw InvalidArgument("grpo: concurrency must be >= 1");
}

std::vector<double> group_advantages(std::span<const double> rewards, double std_eps) {
    if (rewards.size() < 2) throw InvalidArgument("group_advantages: need at least two rewards");
    const double n = static_cast<double>(rewards.size());
    const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
    double var = 0.0;
    for (double r : rewards) var += (r - mean) * (r - mean);
    const double denom = std::max(std_eps, std::sqrt(var / n));
    std::vector<double> adv;
    adv.reserve(rewards.size());
    for (double r : rewards) adv.push_back((r - mean) / denom);
    return adv;
}

double importance_ratio(double new_logprob, double old_logprob) { return std::exp(new_logprob - old_logprob); }

double clipped_term(double w, double advantage, double clip_eps) {
    return std::min(w * advantage, std::clamp(w, 1.0 - clip_eps, 1.0 + clip_eps) * advantage);
}

bool clip_active(double w, double advantage, double clip_eps) {
    return (advantage > 0.0 && w > 1.0 + clip_eps) || (advantage < 0.0 && w < 1.0 - clip_eps);
}

double kl_estimate(double logprob, double ref_logprob) {
    const double z = ref_logprob - logprob;
    return std::exp(z) - z - 1.0;
}

KlResult kl_term_and_grad(const PolicyParams& params, const PolicyParams& ref, std::span<const TokenId> query,
                          std::span<const TokenId> output) {
    if (!params.same_shape(ref)) throw InvalidArgument("kl_term_and_grad: params and ref differ in shape");
    if (output.empty()) throw InvalidArgument("kl_term_and_grad: empty output");
    const auto ref_lp = sequence_logprob(ref, query, output).per_token;
    KlResult r{{}, 0.0, Gradient(params.arch())};
    const double inv = 1.0 / static_cast<double>(output.size());
    weighted_backward(
        params, query, output,
        [&](std::span<const double> lp) {
            std::vector<double> w(lp.size());
            for (std::size_t t = 0; t < lp.size(); ++t) {
                r.per_token.push_back(kl_estimate(lp[t], ref_lp[t]));
                w[t] = inv * (1.0 - std::exp(ref_lp[t] - lp[t]));
            }
            return w;
        },
        r.grad);
    for (double k : r.per_token) r.mean += k * inv;
    return r;
}

namespace {

void check_group(const RolloutGroup& group) {
    if (group.rollouts.empty()) throw InvalidArgument("grpo_gradient: group without rollouts");
    for (const auto& ro : group.rollouts) {
        if (ro.output.empty()) throw InvalidArgument("grpo_gradient: empty rollout");
        if (ro.old_logprobs.size() != ro.output.size()) {
            throw InvalidArgument("grpo_gradient: old logprob count differs from output length");
        }
        if (!ro.ref_logprobs.empty() && ro.ref_logprobs.size() != ro.output.size()) {
            throw InvalidArgument("grpo_gradient: ref logprob count differs from output length");
        }
        if (!std::isfinite(ro.advantage)) throw InvalidArgument("grpo_gradient: non-finite advantage");
    }
}

struct GroupPart {
    double kl_sum = 0.0;
    std::size_t clipped = 0;
    std::size_t tokens = 0;
};

}  // namespace

GrpoGradient grpo_gradient(const PolicyParams& params, std::span<const RolloutGroup> groups, const PolicyParams& ref,
                           const GrpoConfig& config) {
    if (groups.empty()) throw InvalidArgument("grpo_gradient: no groups");
    if (!params.same_shape(ref)) throw InvalidArgument("grpo_gradient: params and ref differ in shape");
    for (const auto& g : groups) check_group(g);

    const double beta = config.beta;
    const double eps = config.clip_eps;
    std::vector<Gradient> partial(groups.size(), Gradient(params.arch()));
    std::vector<GroupPart> parts(groups.size());
    parallel_for(groups.size(), config.concurrency, [&](std::size_t gi) {
        const RolloutGroup& group = groups[gi];
        const double group_scale =
            1.0 / (static_cast<double>(groups.size()) * static_cast<double>(group.rollouts.size()));
        for (const auto& ro : group.rollouts) {
            std::vector<double> ref_lp = ro.ref_logprobs;
            if (beta > 0.0 && ref_lp.empty()) ref_lp = sequence_logprob(ref, group.query, ro.output).per_token;
            const double scale = group_scale / static_cast<double>(ro.output.size());
            double kl = 0.0;
            weighted_backward(
                params, group.query, ro.output,
                [&](std::span<const double> lp) {
                    std::vector<double> w(lp.size());
                    for (std::size_t t = 0; t < lp.size(); ++t) {
                        const double ratio = importance_ratio(lp[t], ro.old_logprobs[t]);
                        double coef = 0.0;
                        const bool clipped = clip_active(ratio, ro.advantage, eps);
                        if (config.clip_gradient == ClipGradient::Surrogate) {
                            coef = clipped ? 0.0 : ratio * ro.advantage;
                        } else {
                            coef = clipped_term(ratio, ro.advantage, eps);
                        }
                        parts[gi].clipped += clipped ? 1 : 0;
                        double kl_grad = 0.0;
                        if (!ref_lp.empty()) {
                            kl += kl_estimate(lp[t], ref_lp[t]);
                            kl_grad = 1.0 - std::exp(ref_lp[t] - lp[t]);
                        }
                        w[t] = scale * (coef - beta * kl_grad);
                    }
                    return w;
                },
                partial[gi]);
            parts[gi].tokens += ro.output.size();
            parts[gi].kl_sum += kl / static_cast<double>(ro.output.size());
        }
    });

    GrpoGradient out{Gradient(params.arch()), 0.0, 0.0};
    std::size_t rollouts = 0, clipped = 0, tokens = 0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        out.grad.add_scaled(partial[gi], 1.0);
        out.mean_kl += parts[gi].kl_sum;
        clipped += parts[gi].clipped;
        tokens += parts[gi].tokens;
        rollouts += groups[gi].rollouts.size();
    }
    out.mean_kl /= static_cast<double>(rollouts);
    out.clip_frac = static_cast<double>(clipped) / static_cast<double>(tokens);
    return out;
}

namespace {

Rng rollout_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t record_index, std::uint64_t member) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),         static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(step),         static_cast<std::uint32_t>(step >> 32),
                      static_cast<std::uint32_t>(record_index), static_cast<std::uint32_t>(member)};
    return Rng(seq);
}

// Generation only; rewards are filled in afterwards on the calling thread.
RolloutGroup generate_group(const PolicyParams& old_params, const Vocab& vocab, const RlRecord& record,
                            const GrpoConfig& config, std::uint64_t step, std::uint64_t record_index) {
    RolloutGroup group{vocab.encode(record.question), {}};
    const SampleConfig sc{config.temperature, config.max_len};
    for (int i = 0; i < config.group_size; ++i) {
        Rng rng = rollout_rng(config.seed, step, record_index, static_cast<std::uint64_t>(i));
        Rollout ro;
        ro.output = sample(old_params, group.query, sc, rng);
        ro.text = vocab.decode(ro.output);
        ro.old_logprobs = sequence_logprob(old_params, group.query, ro.output).per_token;
        group.rollouts.push_back(std::move(ro));
    }
    return group;
}

void score_group(RolloutGroup& group, const RlRecord& record, Judge& judge, const GrpoConfig& config) {
    std::vector<double> totals;
    for (auto& ro : group.rollouts) {
        ro.reward = total_reward(ro.text, record.solution, judge, config.rules, record.question);
        totals.push_back(ro.reward.total);
    }
    const auto adv = group_advantages(totals, config.std_eps);
    for (std::size_t i = 0; i < adv.size(); ++i) group.rollouts[i].advantage = adv[i];
}

}  // namespace

RolloutGroup sample_group(const PolicyParams& old_params, const Vocab& vocab, const RlRecord& record, Judge& judge,
                          const GrpoConfig& config, std::uint64_t step, std::uint64_t record_index) {
    config.validate();
    RolloutGroup group = generate_group(old_params, vocab, record, config, step, record_index);
    score_group(group, record, judge, config);
    return group;
}

GrpoStepResult grpo_step(const PolicyParams& params, const Vocab& vocab, std::span<const RlRecord> minibatch,
                         const PolicyParams& ref, const GrpoConfig& config, Judge& judge, std::uint64_t step,
                         OptimizerState* adam_state) {
    config.validate();
    if (minibatch.empty()) throw InvalidArgument("grpo_step: empty minibatch");
    if (!params.same_shape(ref)) throw InvalidArgument("grpo_step: params and ref differ in shape");
    if (params.arch().vocab_size != vocab.size()) throw InvalidArgument("grpo_step: vocab size differs from policy");

    const PolicyParams old_params = params;
    std::vector<RolloutGroup> groups(minibatch.size());
    parallel_for(minibatch.size(), config.concurrency, [&](std::size_t b) {
        groups[b] = generate_group(old_params, vocab, minibatch[b], config, step, b);
        if (config.beta > 0.0) {
            for (auto& ro : groups[b].rollouts) {
                ro.ref_logprobs = sequence_logprob(ref, groups[b].query, ro.output).per_token;
            }
        }
    });

    GrpoMetrics base;
    base.iteration = static_cast<int>(step);
    std::size_t count = 0;
    for (std::size_t b = 0; b < minibatch.size(); ++b) {
        score_group(groups[b], minibatch[b], judge, config);
        for (const auto& ro : groups[b].rollouts) {
            base.mean_fmt += ro.reward.fmt;
            base.mean_acc += ro.reward.acc;
            base.mean_total += ro.reward.total;
            base.mean_advantage += ro.advantage;
            ++count;
        }
    }
    const double n = static_cast<double>(count);
    base.mean_fmt /= n;
    base.mean_acc /= n;
    base.mean_total /= n;
    base.mean_advantage /= n;

    std::optional<OptimizerState> local_adam;
    if (config.use_adam && adam_state == nullptr) {
        local_adam = OptimizerState::fresh(params, config.adam);
        adam_state = &*local_adam;
    }

    GrpoStepResult result{params, {}};
    for (int m = 0; m < config.inner_steps; ++m) {
        GrpoGradient g = grpo_gradient(result.params, groups, ref, config);
        GrpoMetrics row = base;
        row.step = m;
        row.mean_kl = g.mean_kl;
        row.clip_frac = g.clip_frac;
        result.metrics.push_back(row);
        if (config.use_adam) {
            g.grad.add_scaled(g.grad, -2.0);  // Adam descends; negate for ascent
            adam_step_inplace(*adam_state, result.params, g.grad);
        } else {
            if (!g.grad.all_finite()) throw InvalidArgument("grpo_step: gradient contains NaN or Inf");
            result.params.add_scaled(g.grad, config.lr);
        }
    }
    return result;
}

GrpoResult train_grpo(const PolicyParams& sft, const Vocab& vocab, std::span<const RlRecord> dataset,
                      const GrpoConfig& config, Judge& judge, const GrpoProgress& progress) {
    config.validate();
    if (dataset.empty()) throw InvalidArgument("train_grpo: empty dataset");
    const PolicyParams ref = sft;
    GrpoResult result{sft, {}};
    std::optional<OptimizerState> adam;
    if (config.use_adam) adam = OptimizerState::fresh(sft, config.adam);

    // minibatch order: per-epoch shuffle, partial tail dropped
    Rng order_rng(config.seed);
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config.minibatch), dataset.size());
    const std::size_t per_epoch = dataset.size() / batch;
    std::vector<std::size_t> order(dataset.size());
    std::size_t cursor = per_epoch;
    std::vector<RlRecord> current;
    for (int it = 0; it < config.iterations; ++it) {
        if (cursor == per_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), order_rng);
            cursor = 0;
        }
        current.clear();
        for (std::size_t i = 0; i < batch; ++i) current.push_back(dataset[order[cursor * batch + i]]);
        ++cursor;
        GrpoStepResult step = grpo_step(result.params, vocab, current, ref, config, judge,
                                        static_cast<std::uint64_t>(it), adam ? &*adam : nullptr);
        result.params = std::move(step.params);
        for (const auto& row : step.metrics) {
            if (progress) progress(row);
            result.metrics.push_back(row);
        }
    }
    return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const GrpoMetrics> metrics) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(17);
    out << "iteration,step,mean_fmt,mean_acc,mean_total,mean_kl,clip_frac\n";
    for (const auto& m : metrics) {
        out << m.iteration << ',' << m.step << ',' << m.mean_fmt << ',' << m.mean_acc << ',' << m.mean_total << ','
            << m.mean_kl << ',' << m.clip_frac << '\n';
    }
}

RewardSummary evaluate_rewards(const PolicyParams& params, const Vocab& vocab, std::span<const RlRecord> records,
                               Judge& judge, double temperature, int max_len, std::uint64_t seed,
                               const EquivalenceRules& rules) {
    if (records.empty()) throw InvalidArgument("evaluate_rewards: no records");
    RewardSummary s;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const TokenIds query = vocab.encode(records[i].question);
        TokenIds out;
        if (temperature <= 0.0) {
            out = greedy_decode(params, query, max_len);
        } else {
            Rng rng = rollout_rng(seed, 0, i, 0);
            out = sample(params, query, {temperature, max_len}, rng);
        }
        const auto r = total_reward(vocab.decode(out), records[i].solution, judge, rules, records[i].question);
        s.mean_fmt += r.fmt;
        s.mean_acc += r.acc;
        s.mean_total += r.total;
    }
    s.n = static_cast<int>(records.size());
    s.mean_fmt /= s.n;
    s.mean_acc /= s.n;
    s.mean_total /= s.n;
    return s;
}

}  // namespace finrl
