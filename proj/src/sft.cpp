#include "finrl/sft.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "finrl/jsonl.hpp"
#include "finrl/reward.hpp"

namespace finrl {

std::string SftRecord::output() const { return "<think>" + think + "</think><answer>" + answer + "</answer>"; }

void validate_record(const SftRecord& record, std::string_view name) {
    const std::string where(name);
    if (trim(record.query).empty()) throw InvalidArgument(where + ": empty query");
    if (trim(record.think).empty()) throw InvalidArgument(where + ": empty reasoning");
    if (trim(record.answer).empty()) throw InvalidArgument(where + ": empty answer");
    if (format_reward(record.output()) != 1) {
        throw InvalidArgument(where + ": assembled output fails the think/answer format");
    }
}

std::vector<SftRecord> read_sft_jsonl(const std::filesystem::path& path) {
    std::vector<SftRecord> records;
    int line = 0;
    for (const auto& row : read_jsonl(path)) {
        const std::string where = path.string() + " record " + std::to_string(++line);
        records.push_back({required_field<std::string>(row, "query", where),
                           required_field<std::string>(row, "think", where),
                           required_field<std::string>(row, "answer", where)});
    }
    return records;
}

void write_sft_jsonl(const std::filesystem::path& path, std::span<const SftRecord> records) {
    std::vector<json> rows;
    for (const auto& r : records) rows.push_back({{"query", r.query}, {"think", r.think}, {"answer", r.answer}});
    write_jsonl(path, rows);
}

EncodedExample encode_example(const Vocab& vocab, const SftRecord& record) {
    EncodedExample ex{vocab.encode(record.query), vocab.encode(record.output())};
    ex.output.push_back(Vocab::kEos);
    return ex;
}

LossAndGrad sft_loss_and_grad(const PolicyParams& params, std::span<const EncodedExample> batch) {
    if (batch.empty()) throw InvalidArgument("sft_loss_and_grad: empty batch");
    LossAndGrad out{0.0, Gradient(params.arch())};
    std::vector<double> weights;
    for (const auto& ex : batch) {
        weights.assign(ex.output.size(), -1.0);
        out.loss -= accumulate_backward(params, ex.query, ex.output, weights, out.grad).total;
    }
    return out;
}

LossAndGrad sft_loss_and_grad(const PolicyParams& params, const Vocab& vocab, std::span<const SftRecord> batch) {
    std::vector<EncodedExample> encoded;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        validate_record(batch[i], "batch record " + std::to_string(i));
        encoded.push_back(encode_example(vocab, batch[i]));
    }
    return sft_loss_and_grad(params, encoded);
}

double mean_token_cross_entropy(const PolicyParams& params, std::span<const EncodedExample> examples) {
    if (examples.empty()) throw InvalidArgument("mean_token_cross_entropy: no examples");
    double nll = 0.0;
    std::size_t tokens = 0;
    for (const auto& ex : examples) {
        nll -= sequence_logprob(params, ex.query, ex.output).total;
        tokens += ex.output.size();
    }
    return nll / static_cast<double>(tokens);
}

OptimizerState OptimizerState::fresh(const PolicyParams& like, const AdamConfig& config) {
    return {config, PolicyParams(like.arch()), PolicyParams(like.arch()), 0};
}

void adam_step_inplace(OptimizerState& state, PolicyParams& params, const Gradient& grad) {
    if (!params.same_shape(grad) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
        throw InvalidArgument("adam_step: shape mismatch between params, gradient and optimizer state");
    }
    if (!grad.all_finite()) throw InvalidArgument("adam_step: gradient contains NaN or Inf");
    const AdamConfig& c = state.config;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    auto p = params.values();
    auto m = state.m.values();
    auto v = state.v.values();
    auto g = grad.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
}

AdamResult adam_step(const OptimizerState& state, const PolicyParams& params, const Gradient& grad) {
    AdamResult r{params, state};
    adam_step_inplace(r.state, r.params, grad);
    return r;
}

SftResult train_sft(const PolicyParams& init, const Vocab& vocab, std::span<const SftRecord> dataset,
                    const SftConfig& config, std::uint64_t seed) {
    if (dataset.empty()) throw InvalidArgument("train_sft: empty dataset");
    if (config.steps < 0 || config.batch_size <= 0) throw InvalidArgument("train_sft: bad step/batch config");
    if (init.arch().vocab_size != vocab.size()) throw InvalidArgument("train_sft: vocab size differs from policy");

    std::vector<EncodedExample> examples;
    examples.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        validate_record(dataset[i], "dataset record " + std::to_string(i));
        examples.push_back(encode_example(vocab, dataset[i]));
    }

    SftResult result{init, {}};
    OptimizerState opt = OptimizerState::fresh(init, config.adam);
    Rng rng(seed);
    const std::size_t batch = std::min<std::size_t>(config.batch_size, examples.size());
    const std::size_t per_epoch = examples.size() / batch;
    std::vector<std::size_t> order(examples.size());
    std::vector<EncodedExample> current;
    std::size_t cursor = per_epoch;
    for (int step = 0; step < config.steps; ++step) {
        if (cursor == per_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        current.clear();
        for (std::size_t i = 0; i < batch; ++i) current.push_back(examples[order[cursor * batch + i]]);
        ++cursor;
        auto [loss, grad] = sft_loss_and_grad(result.params, current);
        result.loss_curve.push_back(loss);
        adam_step_inplace(opt, result.params, grad);
    }
    return result;
}

void write_loss_csv(const std::filesystem::path& path, std::span<const double> curve) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out.precision(17);
    out << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << curve[i] << '\n';
}

}  // namespace finrl
