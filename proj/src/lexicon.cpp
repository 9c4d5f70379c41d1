#include "finrl/lexicon.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "finrl/error.hpp"

namespace finrl {

namespace {

constexpr const char* kSpecialNames[Vocab::kNumSpecials] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

// One token per line, so newlines, tabs and backslashes are escaped.
std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\' || i + 1 == s.size()) {
            out += s[i];
            continue;
        }
        switch (s[++i]) {
            case 'n': out += '\n'; break;
            case 'r': out += '\r'; break;
            case 't': out += '\t'; break;
            case '\\': out += '\\'; break;
            default: throw FormatError("vocab file: bad escape sequence");
        }
    }
    return out;
}

// Greedy marker-first segmentation shared by vocabulary building.
template <typename OnMarker, typename OnChar>
void segment(std::string_view text, std::span<const std::string> markers, OnMarker on_marker,
             OnChar on_char) {
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::string* best = nullptr;
        for (const auto& m : markers) {
            if (!m.empty() && text.substr(pos, m.size()) == m &&
                (best == nullptr || m.size() > best->size())) {
                best = &m;
            }
        }
        if (best != nullptr) {
            on_marker(*best);
            pos += best->size();
            continue;
        }
        std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[pos])), text.size() - pos);
        on_char(text.substr(pos, len));
        pos += len;
    }
}

}  // namespace

std::vector<std::string_view> split_utf8(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t len = std::min(utf8_length(static_cast<unsigned char>(text[pos])), text.size() - pos);
        out.push_back(text.substr(pos, len));
        pos += len;
    }
    return out;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < kNumSpecials) {
        throw InvalidArgument("vocab needs at least the four special tokens");
    }
    by_first_byte_.resize(256);
    for (TokenId id = 0; id < size(); ++id) {
        const auto& tok = tokens_[id];
        if (!index_.emplace(tok, id).second) {
            throw InvalidArgument("duplicate token in vocab: '" + escape(tok) + "'");
        }
        if (id >= kNumSpecials) {
            if (tok.empty()) throw InvalidArgument("empty token in vocab");
            by_first_byte_[static_cast<unsigned char>(tok[0])].push_back(id);
        }
    }
    for (auto& bucket : by_first_byte_) {
        std::stable_sort(bucket.begin(), bucket.end(), [&](TokenId a, TokenId b) {
            return tokens_[a].size() > tokens_[b].size();
        });
    }
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || id >= size()) {
        throw InvalidArgument("token id " + std::to_string(id) + " out of range for vocab of size " +
                              std::to_string(size()));
    }
    return tokens_[id];
}

TokenId Vocab::id_of(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    return it == index_.end() ? kUnk : it->second;
}

TokenIds Vocab::encode(std::string_view text) const {
    TokenIds out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        TokenId match = kUnk;
        std::size_t match_len = 0;
        for (TokenId id : by_first_byte_[static_cast<unsigned char>(text[pos])]) {
            const auto& tok = tokens_[id];
            if (text.substr(pos, tok.size()) == tok) {
                match = id;
                match_len = tok.size();
                break;
            }
        }
        if (match == kUnk) {
            match_len = std::min(utf8_length(static_cast<unsigned char>(text[pos])), text.size() - pos);
        }
        out.push_back(match);
        pos += match_len;
    }
    return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
        const auto& tok = token(id);
        if (!is_special(id)) out += tok;
    }
    return out;
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocab file " + path.string());
    for (const auto& tok : tokens_) out << escape(tok) << '\n';
    if (!out) throw Error("failed writing vocab file " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read vocab file " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) tokens.push_back(unescape(line));
    if (tokens.size() < kNumSpecials) throw FormatError("vocab file missing special-token header");
    for (int i = 0; i < kNumSpecials; ++i) {
        if (tokens[i] != kSpecialNames[i]) {
            throw FormatError("vocab file: expected special token " + std::string(kSpecialNames[i]) +
                              " on line " + std::to_string(i + 1));
        }
    }
    return Vocab(std::move(tokens));
}

Vocab build_vocab(std::span<const std::string> corpus, const VocabConfig& config) {
    if (corpus.empty()) throw InvalidArgument("build_vocab: corpus is empty");

    std::vector<std::string> tokens(std::begin(kSpecialNames), std::end(kSpecialNames));
    for (const auto& m : config.atomic_markers) {
        if (m.empty()) throw InvalidArgument("build_vocab: empty atomic marker");
        if (std::find(tokens.begin(), tokens.end(), m) == tokens.end()) tokens.push_back(m);
    }

    std::map<std::string, int> counts;  // ordered: ids follow byte order
    for (const auto& text : corpus) {
        segment(text, config.atomic_markers, [](const std::string&) {},
                [&](std::string_view ch) { ++counts[std::string(ch)]; });
    }
    for (const auto& [ch, count] : counts) {
        if (count >= config.min_frequency &&
            std::find(tokens.begin(), tokens.end(), ch) == tokens.end()) {
            tokens.push_back(ch);
        }
    }
    return Vocab(std::move(tokens));
}

}  // namespace finrl
