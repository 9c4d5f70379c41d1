#include "finrl/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "finrl/config.hpp"
#include "finrl/error.hpp"
#include "finrl/eval_bench.hpp"

namespace finrl {

namespace fs = std::filesystem;

namespace {

struct Plan {
    std::vector<std::pair<std::string, fs::path>> inputs;  // (config key, path)
    std::vector<std::string> outputs;                       // file names inside out_dir
};

struct Stage {
    std::string name;
    std::string help;
    std::function<Plan(const RunConfig&)> plan;
    std::function<void(const RunConfig&, std::ostream&)> run;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

fs::path out_file(const RunConfig& c, const std::string& name) { return c.paths.out_dir / name; }

fs::path journal_path(const RunConfig& c) {
    return c.paths.journal.empty() ? out_file(c, "distill_journal.jsonl") : c.paths.journal;
}

std::vector<RlRecord> limited(std::vector<RlRecord> records, int limit) {
    if (limit > 0 && records.size() > static_cast<std::size_t>(limit)) records.resize(static_cast<std::size_t>(limit));
    return records;
}

PolicyParams load_checkpoint(const RunConfig& c, const Vocab& vocab) {
    PolicyParams p = PolicyParams::load(c.paths.checkpoint);
    if (p.arch().vocab_size != vocab.size()) {
        throw InvalidArgument("checkpoint vocab size " + std::to_string(p.arch().vocab_size) + " differs from vocab (" +
                              std::to_string(vocab.size()) + ")");
    }
    return p;
}

std::string fixed6(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

// --- stages -----------------------------------------------------------------

void run_synth(const RunConfig& c, std::ostream& out) {
    const auto tasks = make_synthetic_corpus(*c.seed, c.synth.count, c.synth.difficulty);
    std::vector<SftRecord> sft;
    std::vector<RlRecord> train, eval;
    for (const auto& t : tasks) {
        if (in_eval_split(t.record.id, c.synth.eval_percent)) {
            eval.push_back(t.record);
        } else {
            train.push_back(t.record);
            sft.push_back(t.demonstration());
        }
    }
    write_sft_jsonl(out_file(c, "sft.jsonl"), sft);
    write_rl_jsonl(out_file(c, "rl_train.jsonl"), train);
    write_rl_jsonl(out_file(c, "rl_eval.jsonl"), eval);
    out << "synth: " << train.size() << " train, " << eval.size() << " held out\n";
}

void run_vocab(const RunConfig& c, std::ostream& out) {
    std::vector<std::string> corpus;
    for (const auto& r : read_sft_jsonl(c.paths.sft_data)) {
        corpus.push_back(r.query);
        corpus.push_back(r.output());
    }
    VocabConfig vc;
    vc.min_frequency = c.min_frequency;
    const Vocab vocab = build_vocab(corpus, vc);
    vocab.save(out_file(c, "vocab.txt"));
    out << "vocab: " << vocab.size() << " tokens\n";
}

void run_distill(const RunConfig& c, std::ostream& out) {
    const auto questions = read_raw_questions(c.paths.raw_questions);
    auto generator = make_backend(c.generator);
    DistillConfig dc = c.distill;
    dc.journal = journal_path(c);
    const auto result = distill(questions, *generator, dc);
    write_distilled(out_file(c, "distilled.jsonl"), result.records);
    std::vector<json> failures;
    for (const auto& f : result.failures) failures.push_back({{"id", f.id}, {"reason", f.reason}});
    write_jsonl(out_file(c, "distill_failures.jsonl"), failures);
    out << "distill: " << result.records.size() << " records, " << result.failures.size() << " failures, "
        << result.generated << " new generations\n";
}

void run_filter(const RunConfig& c, std::ostream& out) {
    const auto records = read_distilled(c.paths.distilled);
    auto answer = make_judge(c.answer_judge, c.filter.retry, EquivalenceRules::exact());
    auto reasoning = make_backend(c.reasoning_judge);
    const auto result = filter_records(records, *answer.judge, *reasoning, c.filter);
    write_distilled(out_file(c, "kept.jsonl"), result.kept);
    std::vector<SftRecord> sft;
    for (const auto& r : result.kept) sft.push_back(r.to_sft());
    write_sft_jsonl(out_file(c, "kept_sft.jsonl"), sft);
    write_rejections(out_file(c, "rejected.jsonl"), result.rejected);
    const std::string report = result.report.to_text();
    write_text(out_file(c, "filter_report.txt"), report);
    out << report;
}

void run_report(const RunConfig& c, std::ostream& out) {
    const auto records = read_distilled(c.paths.distilled);
    const std::string text = compose_report(records).to_text();
    write_text(out_file(c, "composition.txt"), text);
    out << text;
}

void run_sft(const RunConfig& c, std::ostream& out) {
    const Vocab vocab = Vocab::load(c.paths.vocab);
    const auto data = read_sft_jsonl(c.paths.sft_data);
    ArchConfig arch = c.arch;
    arch.vocab_size = vocab.size();
    const PolicyParams init = init_params(arch, *c.seed);
    const auto result = train_sft(init, vocab, data, c.sft, *c.seed);
    result.params.save(out_file(c, "sft.ckpt"));
    write_loss_csv(out_file(c, "sft_loss.csv"), result.loss_curve);
    out << "sft: " << result.loss_curve.size() << " steps, " << param_count(arch) << " parameters\n";
}

void run_grpo(const RunConfig& c, std::ostream& out) {
    const Vocab vocab = Vocab::load(c.paths.vocab);
    const PolicyParams sft = load_checkpoint(c, vocab);
    const auto data = read_rl_jsonl(c.paths.rl_data);
    auto judge = make_judge(c.answer_judge, RetryPolicy{}, c.grpo.rules);
    GrpoConfig gc = c.grpo;
    gc.seed = *c.seed;
    const int every = std::max(1, gc.iterations * gc.inner_steps / 20);
    const auto result = train_grpo(sft, vocab, data, gc, *judge.judge, [&](const GrpoMetrics& m) {
        if (m.step % every == 0) {
            spdlog::info("grpo step {}: fmt {:.3f} acc {:.3f} kl {:.4f}", m.step, m.mean_fmt, m.mean_acc, m.mean_kl);
        }
    });
    result.params.save(out_file(c, "grpo.ckpt"));
    write_metrics_csv(out_file(c, "grpo_metrics.csv"), result.metrics);
    out << "grpo: " << result.metrics.size() << " updates\n";
}

void run_eval(const RunConfig& c, std::ostream& out) {
    const Vocab vocab = Vocab::load(c.paths.vocab);
    const PolicyParams params = load_checkpoint(c, vocab);
    const auto records = limited(read_rl_jsonl(c.paths.eval_data), c.eval.limit);
    auto judge = make_judge(c.answer_judge, RetryPolicy{}, c.grpo.rules);
    const auto sampled =
        evaluate_rewards(params, vocab, records, *judge.judge, c.eval.temperature, c.eval.max_len, *c.seed, c.grpo.rules);
    EvalSet set;
    set.records = records;
    set.source_name = c.paths.eval_data.filename().string();
    const auto greedy = score_model(params, vocab, set, *judge.judge, {c.eval.max_len, c.grpo.rules});
    const json report = {{"n", sampled.n},
                         {"temperature", c.eval.temperature},
                         {"mean_fmt", fixed6(sampled.mean_fmt)},
                         {"mean_acc", fixed6(sampled.mean_acc)},
                         {"mean_total", fixed6(sampled.mean_total)},
                         {"greedy_correct", greedy.correct},
                         {"greedy_score", format_score(greedy.score)}};
    write_text(out_file(c, "eval.json"), report.dump(2) + "\n");
    out << report.dump(2) << "\n";
}

void run_judge_bench(const RunConfig& c, std::ostream& out) {
    const auto pairs = read_labeled_pairs(c.paths.judge_fixture);
    std::vector<std::unique_ptr<TextBackend>> owned;
    std::vector<NamedBackend> named;
    for (const auto& spec : c.bench_backends) {
        owned.push_back(make_backend(spec));
        named.push_back({spec.id, owned.back().get()});
    }
    const auto table = run_prompt_experiment(pairs, named, c.judge_bench);
    write_text(out_file(c, "judge_table.txt"), table.to_text());
    write_text(out_file(c, "judge_table.csv"), table.to_csv());
    write_text(out_file(c, "agreement_matrix.csv"), agreement_matrix_csv(table, pairs, c.judge_bench.repeats));
    out << table.to_text();
}

// --- plans --------------------------------------------------------------------

void require_backend(const BackendSpec& spec, const char* key, bool rule_ok, Plan& plan) {
    if (spec.kind == "rule" && !rule_ok) {
        throw InvalidArgument(std::string("backends.") + key + " must be an http or replay backend");
    }
    if (spec.kind == "replay") plan.inputs.push_back({std::string("backends.") + key + ".replay", spec.replay});
}

const std::vector<Stage>& stages() {
    static const std::vector<Stage> table = {
        {"synth", "Generate the synthetic financial-arithmetic corpus",
         [](const RunConfig&) { return Plan{{}, {"sft.jsonl", "rl_train.jsonl", "rl_eval.jsonl"}}; }, run_synth},
        {"vocab", "Build the token vocabulary from SFT records",
         [](const RunConfig& c) { return Plan{{{"paths.sft_data", c.paths.sft_data}}, {"vocab.txt"}}; }, run_vocab},
        {"distill", "Generate reasoning traces for raw questions",
         [](const RunConfig& c) {
             Plan p{{{"paths.raw_questions", c.paths.raw_questions}},
                    {"distilled.jsonl", "distill_failures.jsonl"}};
             require_backend(c.generator, "generator", false, p);
             if (c.paths.journal.empty()) p.outputs.push_back("distill_journal.jsonl");
             return p;
         },
         run_distill},
        {"filter", "Answer check and reasoning selection of distilled records",
         [](const RunConfig& c) {
             Plan p{{{"paths.distilled", c.paths.distilled}},
                    {"kept.jsonl", "kept_sft.jsonl", "rejected.jsonl", "filter_report.txt"}};
             require_backend(c.answer_judge, "answer_judge", true, p);
             require_backend(c.reasoning_judge, "reasoning_judge", false, p);
             return p;
         },
         run_filter},
        {"report", "Dataset composition by source",
         [](const RunConfig& c) { return Plan{{{"paths.distilled", c.paths.distilled}}, {"composition.txt"}}; },
         run_report},
        {"sft", "Supervised fine-tuning from a fresh initialization",
         [](const RunConfig& c) {
             return Plan{{{"paths.vocab", c.paths.vocab}, {"paths.sft_data", c.paths.sft_data}},
                         {"sft.ckpt", "sft_loss.csv"}};
         },
         run_sft},
        {"grpo", "Group relative policy optimization from a checkpoint",
         [](const RunConfig& c) {
             Plan p{{{"paths.vocab", c.paths.vocab},
                     {"paths.checkpoint", c.paths.checkpoint},
                     {"paths.rl_data", c.paths.rl_data}},
                    {"grpo.ckpt", "grpo_metrics.csv"}};
             require_backend(c.answer_judge, "answer_judge", true, p);
             return p;
         },
         run_grpo},
        {"eval", "Reward and accuracy of a checkpoint on held-out questions",
         [](const RunConfig& c) {
             Plan p{{{"paths.vocab", c.paths.vocab},
                     {"paths.checkpoint", c.paths.checkpoint},
                     {"paths.eval_data", c.paths.eval_data}},
                    {"eval.json"}};
             require_backend(c.answer_judge, "answer_judge", true, p);
             return p;
         },
         run_eval},
        {"judge-bench", "Judge prompt-format experiment against human labels",
         [](const RunConfig& c) {
             Plan p{{{"paths.judge_fixture", c.paths.judge_fixture}},
                    {"judge_table.txt", "judge_table.csv", "agreement_matrix.csv"}};
             if (c.bench_backends.empty()) throw InvalidArgument("backends.bench lists no backends");
             for (std::size_t i = 0; i < c.bench_backends.size(); ++i) {
                 const std::string key = "bench[" + std::to_string(i) + "]";
                 require_backend(c.bench_backends[i], key.c_str(), false, p);
             }
             return p;
         },
         run_judge_bench},
    };
    return table;
}

void check_inputs(const Plan& plan) {
    for (const auto& [key, path] : plan.inputs) {
        if (path.empty()) throw InvalidArgument(key + " is not set");
        if (!fs::is_regular_file(path)) throw InvalidArgument(key + ": no such file " + path.string());
    }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Financial reasoning post-training pipeline"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::vector<std::string> overrides;
    bool dry_run = false;
    std::string log_level = "info";
    app.add_option("-c,--config", config_path, "JSON config file merged onto the defaults");
    app.add_option("-s,--seed", seed, "Global seed (required here or in the config)");
    app.add_option("-o,--out", out_dir, "Output directory (overrides paths.out_dir)");
    app.add_option("--set", overrides, "Override a config value, e.g. --set grpo.iterations=10")->take_all();
    app.add_flag("--dry-run", dry_run, "Validate and print the resolved plan without writing anything");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    for (const auto& stage : stages()) app.add_subcommand(stage.name, stage.help);

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto logger = std::make_shared<spdlog::logger>("finrl", sink);
    logger->set_pattern("[%l] %v");
    logger->set_level(spdlog::level::from_str(log_level));
    auto previous = spdlog::default_logger();
    spdlog::set_default_logger(logger);
    struct Restore {
        std::shared_ptr<spdlog::logger> logger;
        ~Restore() { spdlog::set_default_logger(logger); }
    } restore{previous};

    const Stage* stage = nullptr;
    for (const auto& s : stages()) {
        if (app.got_subcommand(s.name)) stage = &s;
    }

    try {
        json tree = default_config_tree();
        if (!config_path.empty()) merge_config(tree, load_config_file(config_path));
        for (const auto& o : overrides) apply_override(tree, o);
        if (seed) tree["seed"] = *seed;
        if (!out_dir.empty()) tree["paths"]["out_dir"] = out_dir;
        const RunConfig config = RunConfig::from_json(tree);
        if (!config.seed) throw InvalidArgument("a seed is required (--seed or \"seed\" in the config)");

        const Plan plan = stage->plan(config);
        check_inputs(plan);

        json resolved = config.to_json();
        resolved["stage"] = stage->name;

        if (dry_run) {
            out << "stage: " << stage->name << "\n";
            for (const auto& [key, path] : plan.inputs) out << "input  " << key << " = " << path.string() << "\n";
            for (const auto& name : plan.outputs) out << "output " << (config.paths.out_dir / name).string() << "\n";
            out << "output " << (config.paths.out_dir / "resolved_config.json").string() << "\n";
            out << resolved.dump(2) << "\n";
            return kExitOk;
        }

        fs::create_directories(config.paths.out_dir);
        write_text(config.paths.out_dir / "resolved_config.json", resolved.dump(2) + "\n");
        spdlog::info("{}: writing to {}", stage->name, config.paths.out_dir.string());
        stage->run(config, out);
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace finrl
