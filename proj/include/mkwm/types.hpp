#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mkwm {

using TokenId = std::uint32_t;

// Bad caller input: out-of-range ids, invalid parameters, malformed files.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Broken internal state (non-finite logits, violated accounting).
class InternalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocabulary {
 public:
  explicit Vocabulary(std::size_t size) : size_(size) {
    if (size < 2) throw InputError("vocabulary size must be at least 2");
  }

  std::size_t size() const noexcept { return size_; }
  bool contains(TokenId t) const noexcept { return t < size_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::size_t size_;
};

// A prompt followed by generated content. The first `prompt_len` tokens are
// the prompt and are never scored by a detector.
struct TokenSequence {
  std::vector<TokenId> tokens;
  std::size_t prompt_len = 0;

  std::size_t size() const noexcept { return tokens.size(); }
  std::size_t generated_len() const noexcept { return tokens.size() - prompt_len; }

  std::span<const TokenId> prompt() const {
    return std::span<const TokenId>(tokens).first(prompt_len);
  }
  std::span<const TokenId> generated() const {
    return std::span<const TokenId>(tokens).subspan(prompt_len);
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

// Throws InputError unless every id is < vocab size and prompt_len fits.
void validate(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace mkwm
