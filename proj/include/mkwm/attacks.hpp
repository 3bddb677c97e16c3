#pragma once

// Forgery adversaries. Nothing here sees a WatermarkKey: inputs are token
// sequences and the attacker's own base model. This header deliberately does
// not include kgw.hpp or multikey.hpp.

#include <Eigen/Core>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mkwm/rng.hpp"
#include "mkwm/synth_lm.hpp"
#include "mkwm/types.hpp"

namespace mkwm {

struct StealOptions {
  // Tokens of context per bucket; 0 pools all positions.
  std::size_t order = 0;
  double pseudo_count = 0.5;
  // Bucket cap for order >= 2 (contexts are hashed into buckets). Order 1
  // uses one bucket per preceding token.
  std::size_t max_buckets = 4096;
  // Buckets with fewer observed tokens back off to the pooled scores.
  double min_bucket_count = 1.0;
};

using ScoreTable = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Learned per-(context bucket, token) green propensity
//   s = log((observed + c) / (expected under base + c)),
// positive where the watermark over-produces a token.
struct StolenSignal {
  std::size_t context_order = 0;
  std::size_t n_samples = 0;
  std::size_t vocab_size = 0;
  double pseudo_count = 0.5;
  double min_bucket_count = 1.0;
  ScoreTable scores;          // buckets x vocab; empty when context_order == 0
  Eigen::VectorXf bucket_mass;  // observed tokens per bucket
  Eigen::VectorXf pooled;       // order-0 scores over the vocabulary

  std::size_t bucket_count() const noexcept { return static_cast<std::size_t>(scores.rows()); }
  std::size_t bucket_of(std::span<const TokenId> context) const;

  // Adds strength * scores for the next token after `context` to `logits`.
  void apply(std::span<const TokenId> context, float strength,
             Eigen::Ref<Eigen::VectorXf> logits) const;
};

// Learns a StolenSignal from watermarked samples by comparing observed token
// counts to the base model's expected counts over the same contexts.
StolenSignal steal(std::span<const TokenSequence> samples, const LmSpec& base,
                   const StealOptions& options = {});

// Samples from softmax(base logits + strength * s(context, .)).
TokenSequence forge(const StolenSignal& signal, const LmSpec& base, const TokenSequence& prompt,
                    std::size_t length, double strength, Rng& rng, double temperature = 1.0);

// Binary serialization ("MKWMSIG1" header, little-endian fields, float32 tables).
void write_signal(std::ostream& out, const StolenSignal& signal);
StolenSignal read_signal(std::istream& in);

enum class ClusterFeatures {
  TokenFrequency,       // normalized unigram counts over the vocabulary
  TransitionSignature,  // normalized counts of hashed (previous, current) token pairs
};

struct ClusterOptions {
  ClusterFeatures features = ClusterFeatures::TokenFrequency;
  std::size_t top_k_dims = 0;  // 0 keeps every dimension
  std::size_t iters = 50;
};

struct ClusterAssignment {
  std::vector<std::size_t> labels;
  std::size_t r_hat = 0;
  // Present only when ground-truth labels were supplied for evaluation.
  std::optional<double> accuracy;

  std::vector<std::size_t> cluster_sizes() const;
  // Largest cluster id; ties go to the lowest id.
  std::size_t largest_cluster() const;
};

// Per-sample feature rows (samples x dims).
Eigen::MatrixXd cluster_features(std::span<const TokenSequence> samples, std::size_t vocab_size,
                                 ClusterFeatures kind);

// Seeded k-means with farthest-point initialization.
ClusterAssignment cluster_by_key(std::span<const TokenSequence> samples, std::size_t vocab_size,
                                 std::size_t r_hat, const ClusterOptions& options, Rng& rng,
                                 std::optional<std::span<const std::size_t>> oracle_labels =
                                     std::nullopt);

// Fraction of samples whose cluster maps to their true label under the best
// one-to-one matching (exhaustive up to 6 labels, greedy above). When there
// are more clusters than true labels, each cluster maps to its majority label.
double clustering_accuracy(std::span<const std::size_t> labels, std::size_t r_hat,
                           std::span<const std::size_t> truth);

// Samples assigned to the largest cluster.
std::vector<TokenSequence> largest_cluster_samples(std::span<const TokenSequence> samples,
                                                   const ClusterAssignment& assignment);

// steal + forge on the largest cluster only.
TokenSequence adaptive_forge(std::span<const TokenSequence> samples,
                             const ClusterAssignment& assignment, const LmSpec& base,
                             const TokenSequence& prompt, std::size_t length, double strength,
                             Rng& rng, const StealOptions& options = {});

}  // namespace mkwm
