#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace finrl {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

/// Tag and math markers the reward grammar is written in. Each becomes a
/// single atomic token so the format check is visible at token level.
inline const std::vector<std::string>& reward_markers() {
    static const std::vector<std::string> markers = {
        "<think>", "</think>", "<answer>", "</answer>", "\\boxed{", "}"};
    return markers;
}

struct VocabConfig {
    /// Characters seen fewer times than this are left out (they encode to UNK).
    int min_frequency = 1;
    /// Strings that are always single tokens, matched before characters.
    std::vector<std::string> atomic_markers = reward_markers();
};

/// Character-level vocabulary with a fixed list of atomic markers.
///
/// Ids 0..3 are PAD, BOS, EOS, UNK. Markers follow in configuration order,
/// then the retained characters in byte order. Immutable once built.
class Vocab {
public:
    static constexpr TokenId kPad = 0;
    static constexpr TokenId kBos = 1;
    static constexpr TokenId kEos = 2;
    static constexpr TokenId kUnk = 3;
    static constexpr int kNumSpecials = 4;

    /// Builds from raw token strings; ids 0..3 must be the specials.
    explicit Vocab(std::vector<std::string> tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(TokenId id) const;
    bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecials; }

    /// Id of an exact token string, or kUnk.
    TokenId id_of(std::string_view token) const;

    TokenIds encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    // Candidate ids per leading byte, longest token first, then lower id.
    std::vector<std::vector<TokenId>> by_first_byte_;
};

Vocab build_vocab(std::span<const std::string> corpus, const VocabConfig& config = {});

/// Splits UTF-8 text into code-point substrings. Invalid bytes stand alone.
std::vector<std::string_view> split_utf8(std::string_view text);

}  // namespace finrl
