#include "finrl/config.hpp"

#include <fstream>

#include "finrl/error.hpp"

namespace finrl {

namespace {

std::string decimal_mode_name(DecimalMode m) { return m == DecimalMode::Exact ? "exact" : "round"; }

DecimalMode parse_decimal_mode(const std::string& s) {
    if (s == "exact") return DecimalMode::Exact;
    if (s == "round") return DecimalMode::RoundToFewerPlaces;
    throw InvalidArgument("decimal_mode must be \"exact\" or \"round\", got \"" + s + "\"");
}

std::string clip_gradient_name(ClipGradient c) { return c == ClipGradient::Surrogate ? "surrogate" : "objective"; }

ClipGradient parse_clip_gradient(const std::string& s) {
    if (s == "surrogate") return ClipGradient::Surrogate;
    if (s == "objective") return ClipGradient::ObjectiveWeight;
    throw InvalidArgument("clip_gradient must be \"surrogate\" or \"objective\", got \"" + s + "\"");
}

json retry_to_json(const RetryPolicy& r) { return {{"retries", r.retries}, {"backoff_ms", r.backoff.count()}}; }

RetryPolicy retry_from_json(const json& j) {
    RetryPolicy r;
    r.retries = j.at("retries").get<int>();
    r.backoff = std::chrono::milliseconds(j.at("backoff_ms").get<std::int64_t>());
    if (r.retries < 0 || r.backoff.count() < 0) throw InvalidArgument("retry settings must be non-negative");
    return r;
}

json adam_to_json(const AdamConfig& a) {
    return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

AdamConfig adam_from_json(const json& j) {
    return {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
            j.at("eps").get<double>()};
}

json spec_to_json(const BackendSpec& s) {
    return {{"kind", s.kind},     {"id", s.id},         {"url", s.url}, {"token_env", s.token_env},
            {"replay", s.replay.string()}, {"timeout_s", s.timeout_s}};
}

BackendSpec spec_from_json(const json& j, const std::string& where) {
    json tree = spec_to_json(BackendSpec{});
    merge_config(tree, j, where);
    BackendSpec s;
    s.kind = tree.at("kind").get<std::string>();
    s.id = tree.at("id").get<std::string>();
    s.url = tree.at("url").get<std::string>();
    s.token_env = tree.at("token_env").get<std::string>();
    s.replay = tree.at("replay").get<std::string>();
    s.timeout_s = tree.at("timeout_s").get<int>();
    if (s.kind != "http" && s.kind != "replay" && s.kind != "rule") {
        throw InvalidArgument(where + ": backend kind must be http, replay or rule");
    }
    if (s.kind == "http" && s.url.empty()) throw InvalidArgument(where + ": http backend needs a url");
    if (s.kind == "replay" && s.replay.empty()) throw InvalidArgument(where + ": replay backend needs a file");
    if (s.timeout_s <= 0) throw InvalidArgument(where + ": timeout_s must be positive");
    if (s.id.empty()) s.id = s.kind == "http" ? s.url : s.kind == "replay" ? s.replay.string() : "rule";
    return s;
}

}  // namespace

json RunConfig::to_json() const {
    json j;
    j["seed"] = seed ? json(*seed) : json(nullptr);
    j["paths"] = {{"out_dir", paths.out_dir.string()},
                  {"vocab", paths.vocab.string()},
                  {"sft_data", paths.sft_data.string()},
                  {"rl_data", paths.rl_data.string()},
                  {"eval_data", paths.eval_data.string()},
                  {"raw_questions", paths.raw_questions.string()},
                  {"distilled", paths.distilled.string()},
                  {"checkpoint", paths.checkpoint.string()},
                  {"judge_fixture", paths.judge_fixture.string()},
                  {"journal", paths.journal.string()}};
    j["arch"] = {{"d_model", arch.d_model},   {"n_layers", arch.n_layers}, {"n_heads", arch.n_heads},
                 {"d_hidden", arch.d_hidden}, {"context", arch.context}};
    j["vocab"] = {{"min_frequency", min_frequency}};
    j["sft"] = {{"steps", sft.steps}, {"batch_size", sft.batch_size}, {"adam", adam_to_json(sft.adam)}};
    j["grpo"] = {{"iterations", grpo.iterations},
                 {"inner_steps", grpo.inner_steps},
                 {"group_size", grpo.group_size},
                 {"clip_eps", grpo.clip_eps},
                 {"beta", grpo.beta},
                 {"std_eps", grpo.std_eps},
                 {"lr", grpo.lr},
                 {"temperature", grpo.temperature},
                 {"max_len", grpo.max_len},
                 {"minibatch", grpo.minibatch},
                 {"use_adam", grpo.use_adam},
                 {"adam", adam_to_json(grpo.adam)},
                 {"clip_gradient", clip_gradient_name(grpo.clip_gradient)},
                 {"decimal_mode", decimal_mode_name(grpo.rules.decimal_mode)},
                 {"concurrency", grpo.concurrency}};
    j["synth"] = {{"count", synth.count}, {"difficulty", synth.difficulty}, {"eval_percent", synth.eval_percent}};
    j["eval"] = {{"temperature", eval.temperature}, {"max_len", eval.max_len}, {"limit", eval.limit}};
    j["distill"] = {{"temperature", distill.temperature},
                    {"concurrency", distill.concurrency},
                    {"max_tokens", distill.max_tokens},
                    {"retry", retry_to_json(distill.retry)}};
    j["filter"] = {{"concurrency", filter.concurrency}, {"retry", retry_to_json(filter.retry)}};
    json formats = json::array();
    for (auto f : judge_bench.formats) formats.push_back(std::string(format_id(f)));
    j["judge_bench"] = {{"repeats", judge_bench.repeats},
                        {"temperature", judge_bench.temperature},
                        {"concurrency", judge_bench.concurrency},
                        {"retry", retry_to_json(judge_bench.retry)},
                        {"formats", formats}};
    json bench = json::array();
    for (const auto& b : bench_backends) bench.push_back(spec_to_json(b));
    j["backends"] = {{"generator", spec_to_json(generator)},
                     {"answer_judge", spec_to_json(answer_judge)},
                     {"reasoning_judge", spec_to_json(reasoning_judge)},
                     {"bench", bench}};
    return j;
}

RunConfig RunConfig::from_json(const json& input) {
    json t = default_config_tree();
    merge_config(t, input);
    RunConfig c;
    try {
        const json& seed = t.at("seed");
        if (!seed.is_null()) {
            if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
                throw InvalidArgument("config: seed must be a non-negative integer");
            }
            c.seed = seed.get<std::uint64_t>();
        }
        const auto& p = t.at("paths");
        c.paths.out_dir = p.at("out_dir").get<std::string>();
        c.paths.vocab = p.at("vocab").get<std::string>();
        c.paths.sft_data = p.at("sft_data").get<std::string>();
        c.paths.rl_data = p.at("rl_data").get<std::string>();
        c.paths.eval_data = p.at("eval_data").get<std::string>();
        c.paths.raw_questions = p.at("raw_questions").get<std::string>();
        c.paths.distilled = p.at("distilled").get<std::string>();
        c.paths.checkpoint = p.at("checkpoint").get<std::string>();
        c.paths.judge_fixture = p.at("judge_fixture").get<std::string>();
        c.paths.journal = p.at("journal").get<std::string>();

        const auto& a = t.at("arch");
        c.arch.d_model = a.at("d_model").get<int>();
        c.arch.n_layers = a.at("n_layers").get<int>();
        c.arch.n_heads = a.at("n_heads").get<int>();
        c.arch.d_hidden = a.at("d_hidden").get<int>();
        c.arch.context = a.at("context").get<int>();
        c.min_frequency = t.at("vocab").at("min_frequency").get<int>();

        const auto& s = t.at("sft");
        c.sft.steps = s.at("steps").get<int>();
        c.sft.batch_size = s.at("batch_size").get<int>();
        c.sft.adam = adam_from_json(s.at("adam"));

        const auto& g = t.at("grpo");
        c.grpo.iterations = g.at("iterations").get<int>();
        c.grpo.inner_steps = g.at("inner_steps").get<int>();
        c.grpo.group_size = g.at("group_size").get<int>();
        c.grpo.clip_eps = g.at("clip_eps").get<double>();
        c.grpo.beta = g.at("beta").get<double>();
        c.grpo.std_eps = g.at("std_eps").get<double>();
        c.grpo.lr = g.at("lr").get<double>();
        c.grpo.temperature = g.at("temperature").get<double>();
        c.grpo.max_len = g.at("max_len").get<int>();
        c.grpo.minibatch = g.at("minibatch").get<int>();
        c.grpo.use_adam = g.at("use_adam").get<bool>();
        c.grpo.adam = adam_from_json(g.at("adam"));
        c.grpo.clip_gradient = parse_clip_gradient(g.at("clip_gradient").get<std::string>());
        c.grpo.rules.decimal_mode = parse_decimal_mode(g.at("decimal_mode").get<std::string>());
        c.grpo.concurrency = g.at("concurrency").get<int>();

        const auto& sy = t.at("synth");
        c.synth.count = sy.at("count").get<int>();
        c.synth.difficulty = sy.at("difficulty").get<int>();
        c.synth.eval_percent = sy.at("eval_percent").get<int>();

        const auto& e = t.at("eval");
        c.eval.temperature = e.at("temperature").get<double>();
        c.eval.max_len = e.at("max_len").get<int>();
        c.eval.limit = e.at("limit").get<int>();

        const auto& d = t.at("distill");
        c.distill.temperature = d.at("temperature").get<double>();
        c.distill.concurrency = d.at("concurrency").get<int>();
        c.distill.max_tokens = d.at("max_tokens").get<int>();
        c.distill.retry = retry_from_json(d.at("retry"));

        const auto& f = t.at("filter");
        c.filter.concurrency = f.at("concurrency").get<int>();
        c.filter.retry = retry_from_json(f.at("retry"));

        const auto& jb = t.at("judge_bench");
        c.judge_bench.repeats = jb.at("repeats").get<int>();
        c.judge_bench.temperature = jb.at("temperature").get<double>();
        c.judge_bench.concurrency = jb.at("concurrency").get<int>();
        c.judge_bench.retry = retry_from_json(jb.at("retry"));
        c.judge_bench.formats.clear();
        for (const auto& id : jb.at("formats")) c.judge_bench.formats.push_back(parse_prompt_format(id.get<std::string>()));

        const auto& b = t.at("backends");
        c.generator = spec_from_json(b.at("generator"), "backends.generator");
        c.answer_judge = spec_from_json(b.at("answer_judge"), "backends.answer_judge");
        c.reasoning_judge = spec_from_json(b.at("reasoning_judge"), "backends.reasoning_judge");
        if (!b.at("bench").is_array()) throw InvalidArgument("backends.bench must be an array");
        for (std::size_t i = 0; i < b.at("bench").size(); ++i) {
            c.bench_backends.push_back(spec_from_json(b.at("bench")[i], "backends.bench[" + std::to_string(i) + "]"));
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }

    for (int v : {c.min_frequency, c.synth.count, c.synth.difficulty, c.eval.max_len, c.distill.concurrency,
                  c.distill.max_tokens, c.filter.concurrency, c.judge_bench.concurrency}) {
        if (v < 1) throw InvalidArgument("config: counts, lengths and concurrency limits must be >= 1");
    }
    if (c.synth.difficulty > 3) throw InvalidArgument("config: synth.difficulty must be 1, 2 or 3");
    if (c.synth.eval_percent < 1 || c.synth.eval_percent > 99) {
        throw InvalidArgument("config: synth.eval_percent must be in [1, 99]");
    }
    if (c.eval.limit < 0) throw InvalidArgument("config: eval.limit must be >= 0");
    if (c.sft.steps < 0 || c.sft.batch_size < 1 || !(c.sft.adam.lr > 0.0)) {
        throw InvalidArgument("config: sft needs steps >= 0, batch_size >= 1 and a positive learning rate");
    }
    if (c.judge_bench.repeats < 1) throw InvalidArgument("config: judge_bench.repeats must be >= 1");
    c.grpo.validate();
    return c;
}

json default_config_tree() { return RunConfig{}.to_json(); }

void merge_config(json& base, const json& patch, const std::string& where) {
    if (!patch.is_object()) throw InvalidArgument("config" + (where.empty() ? "" : " " + where) + ": expected an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const std::string path = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) throw InvalidArgument("config: unknown key " + path);
        json& slot = base[it.key()];
        if (slot.is_object() && it.value().is_object()) {
            merge_config(slot, it.value(), path);
        } else if (slot.is_object() != it.value().is_object() && !slot.is_null()) {
            throw InvalidArgument("config: " + path + " has the wrong type");
        } else {
            slot = it.value();
        }
    }
}

void apply_override(json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("override must look like key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json patch = value;
    std::size_t end = key.size();
    while (true) {
        const auto dot = key.rfind('.', end - 1);
        const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                            end - (dot == std::string::npos ? 0 : dot + 1));
        if (part.empty()) throw InvalidArgument("override key '" + key + "' has an empty component");
        patch = json{{part, patch}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    merge_config(tree, patch);
}

json load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::unique_ptr<TextBackend> make_backend(const BackendSpec& spec) {
    if (spec.kind == "http") {
        return std::make_unique<HttpBackend>(spec.id, spec.url, spec.token_env, std::chrono::seconds(spec.timeout_s));
    }
    if (spec.kind == "replay") {
        auto backend = std::make_unique<ReplayBackend>(spec.id);
        int line = 0;
        for (const auto& row : read_jsonl(spec.replay)) {
            const std::string where = spec.replay.string() + " record " + std::to_string(++line);
            backend->record(required_field<std::string>(row, "prompt", where),
                            required_field<std::string>(row, "reply", where));
        }
        return backend;
    }
    throw InvalidArgument("backend kind '" + spec.kind + "' cannot generate text");
}

JudgeHandle make_judge(const BackendSpec& spec, const RetryPolicy& retry, const EquivalenceRules& rules) {
    JudgeHandle h;
    if (spec.kind == "rule") {
        h.judge = std::make_unique<MockJudge>(rules);
        return h;
    }
    h.backend = make_backend(spec);
    h.judge = std::make_unique<BackendJudge>(*h.backend, PromptFormat::OF, retry, 0.0);
    return h;
}

}  // namespace finrl
