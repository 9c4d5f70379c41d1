#include "finrl/foundry.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "finrl/error.hpp"
#include "finrl/reward.hpp"

namespace finrl {

const std::vector<SourceInfo>& known_sources() {
    static const std::vector<SourceInfo> sources = {
        {"FinanceQT", "Financial Code"},
        {"Finance-500K", "Financial Professional Knowledge"},
        {"FinanceIQ", "Financial Professional Knowledge"},
        {"FinPEE", "Financial Professional Knowledge"},
        {"Ant-Finance", "Financial Non-reasoning Business Knowledge"},
        {"FinCorpus", "Financial Non-reasoning Business Knowledge"},
        {"FinQA", "Financial Reasoning Business Knowledge"},
        {"ConvFinQA", "Financial Reasoning Business Knowledge"},
        {"TFNS", "Financial Reasoning Business Knowledge"},
        {"FinCUGE", "Financial Reasoning Business Knowledge"},
    };
    return sources;
}

namespace {

bool is_known_source(std::string_view name) {
    const auto& s = known_sources();
    return std::any_of(s.begin(), s.end(), [&](const SourceInfo& i) { return i.name == name; });
}

std::string kind_name(QuestionKind k) { return k == QuestionKind::Objective ? "objective" : "subjective"; }
std::string language_name(Language l) { return l == Language::Zh ? "zh" : "en"; }

QuestionKind parse_kind(const std::string& s, const std::string& where) {
    if (s == "objective") return QuestionKind::Objective;
    if (s == "subjective") return QuestionKind::Subjective;
    throw FormatError(where + ": kind must be objective or subjective, got '" + s + "'");
}

Language parse_language(const std::string& s, const std::string& where) {
    if (s == "zh") return Language::Zh;
    if (s == "en") return Language::En;
    throw FormatError(where + ": language must be zh or en, got '" + s + "'");
}

json raw_to_json(const RawQuestion& q) {
    json row = {{"id", q.id},         {"question", q.question},          {"kind", kind_name(q.kind)},
                {"source", q.source}, {"language", language_name(q.language)}};
    if (q.reference) row["reference"] = *q.reference;
    return row;
}

RawQuestion raw_from_json(const json& row, const std::string& where) {
    RawQuestion q;
    q.id = required_field<std::string>(row, "id", where);
    q.question = required_field<std::string>(row, "question", where);
    q.kind = parse_kind(required_field<std::string>(row, "kind", where), where);
    if (row.contains("reference") && !row["reference"].is_null()) {
        q.reference = required_field<std::string>(row, "reference", where);
    }
    q.source = required_field<std::string>(row, "source", where);
    q.language = parse_language(required_field<std::string>(row, "language", where), where);
    validate_raw_question(q, where);
    return q;
}

}  // namespace

void validate_raw_question(const RawQuestion& q, std::string_view where) {
    const std::string w(where);
    if (q.id.empty()) throw InvalidArgument(w + ": empty id");
    if (trim(q.question).empty()) throw InvalidArgument(w + ": empty question");
    if (q.kind == QuestionKind::Objective && (!q.reference || trim(*q.reference).empty())) {
        throw InvalidArgument(w + ": objective question without a reference answer");
    }
    if (!is_known_source(q.source)) throw InvalidArgument(w + ": unknown source '" + q.source + "'");
}

std::vector<RawQuestion> read_raw_questions(const std::filesystem::path& path) {
    std::vector<RawQuestion> out;
    std::set<std::string> ids;
    int line = 0;
    for (const auto& row : read_jsonl(path)) {
        const std::string where = path.string() + " record " + std::to_string(++line);
        out.push_back(raw_from_json(row, where));
        if (!ids.insert(out.back().id).second) throw FormatError(where + ": duplicate id '" + out.back().id + "'");
    }
    return out;
}

void write_raw_questions(const std::filesystem::path& path, std::span<const RawQuestion> questions) {
    std::vector<json> rows;
    for (const auto& q : questions) rows.push_back(raw_to_json(q));
    write_jsonl(path, rows);
}

// --- distillation ----------------------------------------------------------

std::string build_distill_prompt(const RawQuestion& raw) {
    std::string p;
    p += "Task description: You are a financial expert. Answer the financial question given as input.\n\n";
    p += "Input:\n" + raw.question + "\n\n";
    p += "Instruction: ";
    p += raw.kind == QuestionKind::Objective ? "Solve the question and give the final answer."
                                             : "Answer the question completely and accurately.";
    p += "\n\n";
    p += "Please analyze the input according to the instruction and generate a step-by-step reasoning process "
         "followed by the final answer.\n\n";
    p += "Notes:\n";
    p += "- Reason strictly according to the instruction.\n";
    p += "- Put the reasoning inside <think></think> and the final answer after it.\n";
    if (raw.language == Language::Zh) p += "- Answer in Chinese.\n";
    if (raw.kind == QuestionKind::Objective) p += "- " + std::string(kBoxedInstruction) + ".\n";
    return p;
}

std::optional<std::pair<std::string, std::string>> split_generation(std::string_view text) {
    if (!text.empty() && text.front() == '\n') text.remove_prefix(1);
    const auto open = text.find("<think>");
    const auto close = text.find("</think>");
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
    if (!trim(text.substr(0, open)).empty()) return std::nullopt;
    std::string reasoning(trim(text.substr(open + 7, close - open - 7)));
    std::string_view rest = trim(text.substr(close + 8));
    if (rest.starts_with("<answer>") && rest.ends_with("</answer>")) {
        rest = trim(rest.substr(8, rest.size() - 8 - 9));
    }
    std::string answer(rest);
    if (reasoning.empty() || answer.empty()) return std::nullopt;
    return std::make_pair(std::move(reasoning), std::move(answer));
}

json distilled_to_json(const DistilledRecord& r) {
    json row = raw_to_json(r.raw);
    row["reasoning"] = r.reasoning;
    row["answer"] = r.answer;
    row["temperature"] = r.temperature;
    row["backend"] = r.backend_id;
    return row;
}

DistilledRecord distilled_from_json(const json& row, std::string_view where) {
    const std::string w(where);
    DistilledRecord r;
    r.raw = raw_from_json(row, w);
    r.reasoning = required_field<std::string>(row, "reasoning", w);
    r.answer = required_field<std::string>(row, "answer", w);
    r.temperature = required_field<double>(row, "temperature", w);
    r.backend_id = required_field<std::string>(row, "backend", w);
    return r;
}

std::vector<DistilledRecord> read_distilled(const std::filesystem::path& path) {
    std::vector<DistilledRecord> out;
    int line = 0;
    for (const auto& row : read_jsonl(path)) {
        out.push_back(distilled_from_json(row, path.string() + " record " + std::to_string(++line)));
    }
    return out;
}

void write_distilled(const std::filesystem::path& path, std::span<const DistilledRecord> records) {
    std::vector<json> rows;
    for (const auto& r : records) rows.push_back(distilled_to_json(r));
    write_jsonl(path, rows);
}

DistillResult distill(std::span<const RawQuestion> questions, TextBackend& generator, const DistillConfig& config) {
    if (!(config.temperature > 0.0)) throw InvalidArgument("distill: temperature must be > 0");
    if (config.concurrency < 1) throw InvalidArgument("distill: concurrency must be >= 1");

    std::map<std::string, DistilledRecord> done;
    if (config.journal && std::filesystem::exists(*config.journal)) {
        for (auto& r : read_distilled(*config.journal)) done.emplace(r.raw.id, std::move(r));
    }
    std::ofstream journal;
    if (config.journal) {
        journal.open(*config.journal, std::ios::app | std::ios::binary);
        if (!journal) throw Error("cannot open journal " + config.journal->string());
    }

    std::vector<std::size_t> todo;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        validate_raw_question(questions[i], "question " + questions[i].id);
        if (!seen.insert(questions[i].id).second) throw InvalidArgument("distill: duplicate id " + questions[i].id);
        if (!done.count(questions[i].id)) todo.push_back(i);
    }

    std::mutex mu;
    DistillResult result;
    parallel_for(todo.size(), config.concurrency, [&](std::size_t k) {
        const RawQuestion& q = questions[todo[k]];
        GenerationRequest req{build_distill_prompt(q), config.temperature, config.max_tokens};
        std::optional<DistilledRecord> record;
        std::string failure;
        try {
            // the forced leading line break
            const std::string text = "\n" + generate_with_retries(generator, req, config.retry).text;
            if (auto parts = split_generation(text)) {
                record = DistilledRecord{q, parts->first, parts->second, config.temperature, generator.id()};
            } else {
                failure = "unparseable generation";
            }
        } catch (const BackendError& e) {
            failure = std::string("backend: ") + e.what();
        }
        std::lock_guard lock(mu);
        ++result.generated;
        if (record) {
            if (journal.is_open()) {
                journal << distilled_to_json(*record).dump() << '\n';
                journal.flush();
            }
            done.emplace(q.id, std::move(*record));
        } else {
            spdlog::warn("distill: {} failed ({})", q.id, failure);
            result.failures.push_back({q.id, failure});
        }
    });

    for (const auto& q : questions) {
        if (auto it = done.find(q.id); it != done.end()) result.records.push_back(it->second);
    }
    std::sort(result.records.begin(), result.records.end(),
              [](const DistilledRecord& a, const DistilledRecord& b) { return a.raw.id < b.raw.id; });
    std::sort(result.failures.begin(), result.failures.end(),
              [](const DistillFailure& a, const DistillFailure& b) { return a.id < b.id; });
    return result;
}

// --- filtering -------------------------------------------------------------

CheckVerdict answer_check(const DistilledRecord& record, Judge& judge) {
    const RawQuestion& q = record.raw;
    if (!q.reference || trim(*q.reference).empty()) return {false, "no reference answer", false};
    if (q.kind == QuestionKind::Objective) {
        const std::string got = extract_from_answer_text(record.answer);
        if (numeric_equivalent(got, *q.reference, EquivalenceRules::exact())) return {true, "", false};
        return {false, "answer mismatch", false};
    }
    try {
        const JudgeVerdict v = judge.judge({q.question, record.answer, *q.reference});
        switch (v.parsed) {
            case Verdict::Consistent: return {true, "", false};
            case Verdict::Inconsistent: return {false, "judge: inconsistent", false};
            case Verdict::Irregular: return {false, "judge: irregular verdict", false};
        }
    } catch (const BackendError& e) {
        return {false, std::string("backend: ") + e.what(), true};
    }
    return {false, "judge: irregular verdict", false};
}

std::string build_reasoning_prompt(const DistilledRecord& record) {
    std::string p = "You are a strict reviewer of financial reasoning.\n\nEvaluation criteria:\n";
    for (std::size_t i = 0; i < kReasoningCriteria.size(); ++i) {
        p += std::to_string(i + 1) + ". " + std::string(kReasoningCriteria[i]) + "\n";
    }
    p += "\nQuestion:\n" + record.raw.question + "\n";
    p += "\nReasoning process:\n" + record.reasoning + "\n";
    p += "\nStandard answer:\n" + record.raw.reference.value_or(record.answer) + "\n";
    p += "\nScoring: each criterion is worth one point (1 if met, 0 otherwise). The reasoning is high quality only "
         "if all seven points are met.\n";
    p += "Reply with JSON only, in the form {\"scores\":[s1,s2,s3,s4,s5,s6,s7]}.\n";
    return p;
}

ReasoningVerdict parse_reasoning_reply(std::string_view raw) {
    ReasoningVerdict v;
    v.raw = std::string(raw);
    v.irregular = true;
    const json j = json::parse(trim(raw), nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("scores")) return v;
    const json& s = j["scores"];
    if (!s.is_array() || s.size() != 7) return v;
    for (std::size_t i = 0; i < 7; ++i) {
        if (!s[i].is_number_integer()) return v;
        const auto b = s[i].get<long long>();
        if (b != 0 && b != 1) return v;
        v.bits[i] = static_cast<int>(b);
    }
    v.irregular = false;
    v.decision = std::all_of(v.bits.begin(), v.bits.end(), [](int b) { return b == 1; }) ? 1 : 0;
    return v;
}

ReasoningVerdict reasoning_select(const DistilledRecord& record, TextBackend& judge, const RetryPolicy& retry) {
    const GenerationRequest req{build_reasoning_prompt(record), 0.0, 64};
    return parse_reasoning_reply(generate_with_retries(judge, req, retry).text);
}

namespace {

void tally(FilterCounts& c, FilterStage stage, bool kept) {
    ++c.input;
    if (kept) {
        ++c.kept;
        return;
    }
    switch (stage) {
        case FilterStage::AnswerCheck: ++c.rejected_answer_check; break;
        case FilterStage::ReasoningSelection: ++c.rejected_reasoning; break;
        case FilterStage::Backend: ++c.backend_failures; break;
    }
}

std::string_view stage_name(FilterStage s) {
    switch (s) {
        case FilterStage::AnswerCheck: return "answer_check";
        case FilterStage::ReasoningSelection: return "reasoning_selection";
        case FilterStage::Backend: return "backend";
    }
    return "?";
}

}  // namespace

FilterResult filter_records(std::span<const DistilledRecord> records, Judge& answer_judge,
                            TextBackend& reasoning_judge, const FilterConfig& config) {
    if (config.concurrency < 1) throw InvalidArgument("filter: concurrency must be >= 1");
    struct Outcome {
        bool kept = false;
        Rejection rejection;
    };
    std::vector<Outcome> outcomes(records.size());
    parallel_for(records.size(), config.concurrency, [&](std::size_t i) {
        const DistilledRecord& r = records[i];
        Outcome& o = outcomes[i];
        o.rejection.id = r.raw.id;
        o.rejection.source = r.raw.source;
        const CheckVerdict check = answer_check(r, answer_judge);
        if (!check.keep) {
            o.rejection.stage = check.backend_failure ? FilterStage::Backend : FilterStage::AnswerCheck;
            o.rejection.reason = check.reason;
            return;
        }
        if (format_reward(r.to_sft().output()) != 1) {
            o.rejection.stage = FilterStage::AnswerCheck;
            o.rejection.reason = "output breaks the think/answer format";
            return;
        }
        try {
            const ReasoningVerdict v = reasoning_select(r, reasoning_judge, config.retry);
            if (v.decision == 1) {
                o.kept = true;
                return;
            }
            o.rejection.stage = FilterStage::ReasoningSelection;
            o.rejection.reason = v.irregular ? "irregular reasoning verdict" : "criteria not all met";
            if (!v.irregular) o.rejection.criteria = v.bits;
        } catch (const BackendError& e) {
            o.rejection.stage = FilterStage::Backend;
            o.rejection.reason = std::string("backend: ") + e.what();
        }
    });

    FilterResult result;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Outcome& o = outcomes[i];
        tally(result.report.totals, o.rejection.stage, o.kept);
        tally(result.report.per_source[records[i].raw.source], o.rejection.stage, o.kept);
        if (o.kept) {
            result.kept.push_back(records[i]);
        } else {
            result.rejected.push_back(o.rejection);
        }
    }
    return result;
}

void write_rejections(const std::filesystem::path& path, std::span<const Rejection> rejected) {
    std::vector<json> rows;
    for (const auto& r : rejected) {
        json row = {{"id", r.id}, {"source", r.source}, {"stage", stage_name(r.stage)}, {"reason", r.reason}};
        if (r.criteria) row["criteria"] = *r.criteria;
        rows.push_back(std::move(row));
    }
    write_jsonl(path, rows);
}

std::string FilterReport::to_text() const {
    std::ostringstream os;
    auto line = [&](const std::string& name, const FilterCounts& c) {
        os << std::left << std::setw(14) << name << std::right << std::setw(8) << c.input << std::setw(8) << c.kept
           << std::setw(14) << c.rejected_answer_check << std::setw(12) << c.rejected_reasoning << std::setw(10)
           << c.backend_failures << '\n';
    };
    os << std::left << std::setw(14) << "Source" << std::right << std::setw(8) << "Input" << std::setw(8) << "Kept"
       << std::setw(14) << "AnswerCheck" << std::setw(12) << "Reasoning" << std::setw(10) << "Backend" << '\n';
    for (const auto& [source, c] : per_source) line(source, c);
    line("Total", totals);
    return os.str();
}

// --- composition -------------------------------------------------------------

std::string percent_2dp(std::int64_t count, std::int64_t total) {
    if (total <= 0 || count < 0) throw InvalidArgument("percent_2dp: bad counts");
    const std::int64_t hundredths = (count * 20000 + total) / (2 * total);
    std::ostringstream os;
    os << hundredths / 100 << '.' << std::setw(2) << std::setfill('0') << hundredths % 100;
    return os.str();
}

CompositionReport compose_report(const std::map<std::string, std::int64_t>& counts_by_source) {
    CompositionReport rep;
    for (const auto& [source, n] : counts_by_source) {
        if (n < 0) throw InvalidArgument("compose_report: negative count for " + source);
        rep.total += n;
    }
    if (rep.total == 0) return rep;

    std::vector<SourceInfo> order = known_sources();
    for (const auto& [source, n] : counts_by_source) {
        if (!is_known_source(source)) order.push_back({source, "Other"});
    }
    for (const auto& info : order) {
        const auto it = counts_by_source.find(info.name);
        if (it == counts_by_source.end() || it->second == 0) continue;
        rep.rows.push_back({info.category, info.name, it->second, percent_2dp(it->second, rep.total)});
        if (rep.categories.empty() || rep.categories.back().first != info.category) {
            rep.categories.emplace_back(info.category, 0);
        }
        rep.categories.back().second += it->second;
    }
    return rep;
}

CompositionReport compose_report(std::span<const DistilledRecord> records) {
    std::map<std::string, std::int64_t> counts;
    for (const auto& r : records) ++counts[r.raw.source];
    return compose_report(counts);
}

std::string CompositionReport::to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(44) << "Data Category" << std::setw(14) << "Source" << std::right << std::setw(11)
       << "Proportion" << std::setw(9) << "Number" << '\n';
    std::string last;
    for (const auto& r : rows) {
        os << std::left << std::setw(44) << (r.category == last ? "" : r.category) << std::setw(14) << r.source
           << std::right << std::setw(11) << (r.percent + "%") << std::setw(9) << r.count << '\n';
        last = r.category;
    }
    os << "\nCategory totals\n";
    for (const auto& [category, n] : categories) {
        os << std::left << std::setw(44) << category << std::right << std::setw(11)
           << (percent_2dp(n, total) + "%") << std::setw(9) << n << '\n';
    }
    os << std::left << std::setw(44) << "Total" << std::right << std::setw(11) << "" << std::setw(9) << total << '\n';
    return os.str();
}

}  // namespace finrl
