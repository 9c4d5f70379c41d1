#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "finrl/cli.hpp"
#include "finrl/config.hpp"
#include "finrl/error.hpp"
#include "finrl/judge_bench.hpp"

using namespace finrl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("finrl_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string set(const std::string& key, const fs::path& p) { return key + "=\"" + p.string() + "\""; }

// synth, vocab and a short SFT run shared by several cases.
struct TinyRun {
    fs::path dir;
    fs::path data;
    fs::path vocab;
    fs::path ckpt;

    explicit TinyRun(const std::string& name) : dir(scratch(name)), data(dir / "data") {
        REQUIRE(run({"synth", "-s", "5", "-o", data.string(), "--set", "synth.count=300", "--log-level", "off"}).code ==
                0);
        REQUIRE(run({"vocab", "-s", "5", "-o", data.string(), "--log-level", "off", "--set",
                     set("paths.sft_data", data / "sft.jsonl")})
                    .code == 0);
        vocab = data / "vocab.txt";
        REQUIRE(run({"sft", "-s", "5", "-o", (dir / "sft").string(), "--log-level", "off", "--set",
                     set("paths.vocab", vocab), set("paths.sft_data", data / "sft.jsonl"), "sft.steps=20"})
                    .code == 0);
        ckpt = dir / "sft" / "sft.ckpt";
    }
};

}  // namespace

TEST_CASE("config overrides take precedence over the file") {
    const auto dir = scratch("precedence");
    {
        std::ofstream cfg(dir / "c.json");
        cfg << R"({"seed": 1, "grpo": {"iterations": 5, "beta": 0.5}, "synth": {"count": 40}})";
    }
    const auto r = run({"synth", "--config", (dir / "c.json").string(), "--seed", "9", "--set", "synth.count=30",
                        "-o", (dir / "out").string(), "--log-level", "off"});
    REQUIRE(r.code == 0);
    const auto resolved = json::parse(slurp(dir / "out" / "resolved_config.json"));
    CHECK(resolved["seed"] == 9);
    CHECK(resolved["synth"]["count"] == 30);
    CHECK(resolved["grpo"]["iterations"] == 5);
    CHECK(resolved["grpo"]["beta"] == 0.5);
    CHECK(resolved["stage"] == "synth");
}

TEST_CASE("exit codes") {
    const auto dir = scratch("exit");
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"bogus"}).code == kExitUsage);
    CHECK(run({"synth", "--no-such-flag"}).code == kExitUsage);
    CHECK(run({"--help"}).code == kExitOk);
    CHECK(run({"synth", "-o", (dir / "a").string()}).code == kExitFailure);  // no seed
    CHECK(run({"synth", "-s", "1", "--set", "synth.nope=3"}).code == kExitFailure);
    CHECK(run({"synth", "-s", "1", "--set", "synth.difficulty=9"}).code == kExitFailure);
    CHECK(run({"sft", "-s", "1", "-o", (dir / "b").string(), "--set", "paths.vocab=\"missing.txt\""}).code ==
          kExitFailure);
    CHECK_FALSE(fs::exists(dir / "a"));
    CHECK_FALSE(fs::exists(dir / "b"));
}

TEST_CASE("dry run writes nothing") {
    const auto dir = scratch("dry");
    const auto r = run({"synth", "-s", "2", "-o", (dir / "out").string(), "--dry-run"});
    CHECK(r.code == 0);
    CHECK(r.out.find("stage: synth") != std::string::npos);
    CHECK(r.out.find("rl_eval.jsonl") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("override parsing") {
    json tree = default_config_tree();
    apply_override(tree, "grpo.iterations=3");
    apply_override(tree, "paths.vocab=some/file.txt");
    apply_override(tree, "grpo.use_adam=true");
    CHECK(tree["grpo"]["iterations"] == 3);
    CHECK(tree["paths"]["vocab"] == "some/file.txt");
    CHECK(tree["grpo"]["use_adam"] == true);
    CHECK_THROWS_AS(apply_override(tree, "grpo.nothing=1"), InvalidArgument);
    CHECK_THROWS_AS(apply_override(tree, "noequals"), InvalidArgument);
    CHECK_THROWS_AS(apply_override(tree, "grpo=3"), InvalidArgument);
    const auto c = RunConfig::from_json(tree);
    CHECK(c.grpo.iterations == 3);
    CHECK_FALSE(c.seed.has_value());
    CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("training stages are byte-identical across reruns") {
    TinyRun t("train");
    const fs::path second = t.dir / "sft2";
    REQUIRE(run({"sft", "-s", "5", "-o", second.string(), "--log-level", "off", "--set", set("paths.vocab", t.vocab),
                 set("paths.sft_data", t.data / "sft.jsonl"), "sft.steps=20"})
                .code == 0);
    CHECK(slurp(t.ckpt) == slurp(second / "sft.ckpt"));
    CHECK(slurp(t.dir / "sft" / "sft_loss.csv") == slurp(second / "sft_loss.csv"));

    for (const char* out : {"g1", "g2"}) {
        const auto r = run({"grpo", "-s", "7", "-o", (t.dir / out).string(), "--log-level", "off", "--set",
                            set("paths.vocab", t.vocab), set("paths.checkpoint", t.ckpt),
                            set("paths.rl_data", t.data / "rl_train.jsonl"), "grpo.iterations=2", "grpo.minibatch=4",
                            "grpo.group_size=4", "grpo.use_adam=true", "grpo.concurrency=2"});
        REQUIRE(r.code == 0);
    }
    CHECK(slurp(t.dir / "g1" / "grpo.ckpt") == slurp(t.dir / "g2" / "grpo.ckpt"));
    CHECK(slurp(t.dir / "g1" / "grpo_metrics.csv") == slurp(t.dir / "g2" / "grpo_metrics.csv"));

    for (const char* out : {"e1", "e2"}) {
        const auto r = run({"eval", "-s", "7", "-o", (t.dir / out).string(), "--log-level", "off", "--set",
                            set("paths.vocab", t.vocab), set("paths.checkpoint", t.dir / "g1" / "grpo.ckpt"),
                            set("paths.eval_data", t.data / "rl_eval.jsonl"), "eval.limit=10"});
        REQUIRE(r.code == 0);
    }
    CHECK(slurp(t.dir / "e1" / "eval.json") == slurp(t.dir / "e2" / "eval.json"));
    const auto report = json::parse(slurp(t.dir / "e1" / "eval.json"));
    CHECK(report["n"] == 10);
}

TEST_CASE("foundry stages through the CLI") {
    const auto dir = scratch("foundry");
    std::vector<RawQuestion> qs = {
        {"a1", "Profit of 3 and 4?", QuestionKind::Objective, "7", "Ant-Finance", Language::En},
        {"a2", "Loss of 2 and 2?", QuestionKind::Objective, "4", "FinQA", Language::En},
        {"a3", "Growth of 9 over 3?", QuestionKind::Objective, "3", "FinQA", Language::En},
        {"a4", "Double 8?", QuestionKind::Objective, "16", "FinCorpus", Language::En},
    };
    write_raw_questions(dir / "raw.jsonl", qs);
    const std::vector<std::string> replies = {
        "<think>3+4=7</think><answer>\\boxed{7}</answer>",
        "<think>2+2=4</think><answer>\\boxed{5}</answer>",  // wrong answer
        "<think>9/3=3</think><answer>\\boxed{3}</answer>",
        "no tags at all",
    };
    {
        std::vector<json> rows;
        for (std::size_t i = 0; i < qs.size(); ++i) rows.push_back({{"prompt", build_distill_prompt(qs[i])}, {"reply", replies[i]}});
        write_jsonl(dir / "gen.jsonl", rows);
    }
    auto distill_args = [&](const std::string& out) {
        return std::vector<std::string>{"distill", "-s", "1", "-o", (dir / out).string(), "--log-level", "off",
                                        "--set", set("paths.raw_questions", dir / "raw.jsonl"),
                                        "backends.generator={\"kind\":\"replay\",\"replay\":\"" +
                                            (dir / "gen.jsonl").string() + "\"}",
                                        "distill.retry.retries=0"};
    };
    REQUIRE(run(distill_args("d1")).code == 0);
    REQUIRE(run(distill_args("d2")).code == 0);
    CHECK(slurp(dir / "d1" / "distilled.jsonl") == slurp(dir / "d2" / "distilled.jsonl"));
    const auto distilled = read_distilled(dir / "d1" / "distilled.jsonl");
    REQUIRE(distilled.size() == 3);
    // a rerun in the same directory resumes from the journal; only the
    // failed question is generated again
    const auto again = run(distill_args("d1"));
    CHECK(again.out.find("3 records, 1 failures, 1 new generations") != std::string::npos);
    CHECK(slurp(dir / "d1" / "distilled.jsonl") == slurp(dir / "d2" / "distilled.jsonl"));

    {
        std::vector<json> rows;
        for (const auto& r : distilled) {
            const bool ok = r.raw.id != "a3";
            rows.push_back({{"prompt", build_reasoning_prompt(r)},
                            {"reply", ok ? R"({"scores":[1,1,1,1,1,1,1]})" : R"({"scores":[1,1,0,1,1,1,1]})"}});
        }
        write_jsonl(dir / "reason.jsonl", rows);
    }
    auto filter_args = [&](const std::string& out) {
        return std::vector<std::string>{"filter", "-s", "1", "-o", (dir / out).string(), "--log-level", "off",
                                        "--set", set("paths.distilled", dir / "d1" / "distilled.jsonl"),
                                        "backends.reasoning_judge={\"kind\":\"replay\",\"replay\":\"" +
                                            (dir / "reason.jsonl").string() + "\"}",
                                        "filter.retry.retries=0"};
    };
    const auto f1 = run(filter_args("f1"));
    REQUIRE(f1.code == 0);
    REQUIRE(run(filter_args("f2")).code == 0);
    for (const char* name : {"kept.jsonl", "kept_sft.jsonl", "rejected.jsonl", "filter_report.txt"}) {
        CHECK(slurp(dir / "f1" / name) == slurp(dir / "f2" / name));
    }
    const auto kept = read_distilled(dir / "f1" / "kept.jsonl");
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].raw.id == "a1");
    CHECK(read_jsonl(dir / "f1" / "rejected.jsonl").size() == 2);

    const auto rep = run({"report", "-s", "1", "-o", (dir / "r").string(), "--log-level", "off", "--set",
                          set("paths.distilled", dir / "d1" / "distilled.jsonl")});
    REQUIRE(rep.code == 0);
    CHECK(rep.out.find("FinQA") != std::string::npos);
    CHECK(rep.out.find("66.67") != std::string::npos);

    // distill without a generator backend is a validation failure
    CHECK(run({"distill", "-s", "1", "-o", (dir / "x").string(), "--set", set("paths.raw_questions", dir / "raw.jsonl")})
              .code == kExitFailure);
}

TEST_CASE("judge bench through the CLI") {
    const auto dir = scratch("judge");
    std::vector<LabeledPair> pairs;
    for (int i = 0; i < 10; ++i) pairs.push_back({std::nullopt, "a" + std::to_string(i), "t" + std::to_string(i), i % 2});
    write_labeled_pairs(dir / "pairs.jsonl", pairs);
    std::vector<json> rows;
    for (int i = 0; i < 10; ++i) {
        const auto prompt = render_judge_prompt(PromptFormat::OF, pairs[i].ground_truth, pairs[i].model_answer);
        for (int r = 0; r < 2; ++r) {
            std::string reply = std::to_string(pairs[i].human_label);
            if (i == 3 && r == 1) reply = "yes";
            if (i == 4 && r == 0) reply = "1";  // label is 0
            rows.push_back({{"prompt", prompt}, {"reply", reply}});
        }
    }
    write_jsonl(dir / "replay.jsonl", rows);
    const auto r = run({"judge-bench", "-s", "1", "-o", (dir / "out").string(), "--log-level", "off", "--set",
                        set("paths.judge_fixture", dir / "pairs.jsonl"), "judge_bench.repeats=2",
                        "judge_bench.formats=[\"OF\"]", "judge_bench.retry.retries=0",
                        "backends.bench=[{\"kind\":\"replay\",\"id\":\"J\",\"replay\":\"" +
                            (dir / "replay.jsonl").string() + "\"}]"});
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "out" / "judge_table.csv") ==
          "format,backend,n,disagreements,irregular,inaccuracy,irregularity\n"
          "OF,J,20,1,1,5.0%,5.0%\n");
    CHECK(slurp(dir / "out" / "agreement_matrix.csv").find("J,OF,0,1,1\n") != std::string::npos);
}
