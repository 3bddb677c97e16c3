#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mkwm/rng.hpp"
#include "mkwm/types.hpp"

namespace mkwm {

// Temperatures below this are treated as greedy decoding.
inline constexpr double kGreedyTemperature = 1e-6;

enum class LmKind { HashSynthetic, NgramCounts };

// Dense next-token counts keyed by the hash of the conditioning window.
struct NgramCounts {
  std::unordered_map<std::uint64_t, Eigen::VectorXd> table;
};

// A deterministic next-token source. Two kinds:
//  - HashSynthetic: logit[t] = entropy_scale * G(mix(lm_seed, ctx, t)), where
//    G is the inverse normal CDF of the hash's uniform embedding. No training,
//    and entropy_scale directly controls how peaked each distribution is.
//  - NgramCounts: logit[t] = ln(count(ctx, t) + smoothing) from a corpus.
// G uses a 2^16-entry inverse-CDF table indexed by the top hash bits.
// Both condition on the last `order` tokens (fewer at the start of a text).
struct LmSpec {
  LmKind kind = LmKind::HashSynthetic;
  Vocabulary vocab{1024};
  double entropy_scale = 1.0;
  std::size_t order = 2;
  std::uint64_t lm_seed = 0;
  std::optional<std::string> counts_source;
  double smoothing = 1.0;
  std::shared_ptr<const NgramCounts> counts;

  static LmSpec hash_synthetic(Vocabulary vocab, double entropy_scale, std::size_t order,
                               std::uint64_t lm_seed);

  // Throws InputError on inconsistent fields.
  void validate() const;
};

// Next-token logits for the given context (all ids must be in the vocabulary).
Eigen::VectorXd logits(const LmSpec& spec, std::span<const TokenId> context);
Eigen::VectorXd logits(const LmSpec& spec, const TokenSequence& context);

// Allocation-free variant for hot loops; `out` must have vocab.size() rows.
// Only the conditioning window is read and it is not range-checked.
// Generation runs in single precision; the double path backs logits().
template <typename Scalar>
void logits_into(const LmSpec& spec, std::span<const TokenId> context,
                 Eigen::Ref<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> out);

// softmax(logits / temperature); -inf entries get probability 0.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits,
                        double temperature = 1.0);

// Shannon entropy in nats of softmax(logits).
double entropy(const Eigen::Ref<const Eigen::VectorXd>& logits);

// Inverse-CDF draw from softmax(logits / temperature) with one uniform from
// `rng`. -inf marks a disallowed token. Below kGreedyTemperature returns the
// argmax with lowest-id tie-break and does not consume randomness.
// Throws InternalError on NaN/+inf or when every entry is -inf.
template <typename Scalar>
TokenId sample_from_logits(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& logits,
                           Rng& rng, double temperature,
                           Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& scratch);

TokenId sample_next(const LmSpec& spec, const TokenSequence& context, Rng& rng,
                    double temperature = 1.0);

// Unwatermarked continuation: prompt ++ `length` sampled tokens.
TokenSequence generate(const LmSpec& spec, const TokenSequence& prompt, std::size_t length,
                       Rng& rng, double temperature = 1.0);

// Uniformly random prompt of `len` tokens; prompt_len == len.
TokenSequence random_prompt(const Vocabulary& vocab, std::size_t len, Rng& rng);

// Count-based model over `corpus`. The vocabulary defaults to max id + 1.
LmSpec train_ngram(const std::vector<TokenSequence>& corpus, std::size_t order,
                   double smoothing, std::optional<Vocabulary> vocab = std::nullopt);

// Corpus format: one sequence per line, whitespace-separated integer ids.
// Blank lines are skipped. Malformed lines raise InputError naming the line.
std::vector<TokenSequence> read_corpus(std::istream& in);
std::vector<TokenSequence> read_corpus_file(const std::string& path);
void write_corpus(std::ostream& out, const std::vector<TokenSequence>& corpus);

}  // namespace mkwm
