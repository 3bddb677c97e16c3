#include "mkwm/synth_lm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "mkwm/hash.hpp"
#include "mkwm/normal.hpp"

namespace mkwm {

void validate(const TokenSequence& seq, const Vocabulary& vocab) {
  if (seq.prompt_len > seq.tokens.size()) {
    throw InputError("prompt_len exceeds sequence length");
  }
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (!vocab.contains(seq.tokens[i])) {
      throw InputError("token id " + std::to_string(seq.tokens[i]) + " at position " +
                       std::to_string(i) + " is outside the vocabulary of size " +
                       std::to_string(vocab.size()));
    }
  }
}

namespace {

void check_ids(std::span<const TokenId> context, const Vocabulary& vocab) {
  for (TokenId t : context) {
    if (!vocab.contains(t)) {
      throw InputError("token id " + std::to_string(t) + " is outside the vocabulary");
    }
  }
}

// G: inverse normal CDF at the midpoints of 2^16 equal-probability bins,
// indexed by the top 16 bits of a hash.
const std::vector<double>& quantile_table() {
  static const std::vector<double> table = [] {
    std::vector<double> t(std::size_t{1} << 16);
    for (std::size_t k = 0; k < t.size(); ++k) {
      t[k] = normal_quantile_approx((static_cast<double>(k) + 0.5) * 0x1.0p-16);
    }
    return t;
  }();
  return table;
}

std::span<const TokenId> window(std::span<const TokenId> context, std::size_t order) {
  const std::size_t n = std::min(order, context.size());
  return context.last(n);
}

}  // namespace

LmSpec LmSpec::hash_synthetic(Vocabulary vocab, double entropy_scale, std::size_t order,
                              std::uint64_t lm_seed) {
  LmSpec spec;
  spec.kind = LmKind::HashSynthetic;
  spec.vocab = vocab;
  spec.entropy_scale = entropy_scale;
  spec.order = order;
  spec.lm_seed = lm_seed;
  spec.validate();
  return spec;
}

void LmSpec::validate() const {
  if (kind == LmKind::HashSynthetic) {
    if (!(entropy_scale >= 0.0) || !std::isfinite(entropy_scale)) {
      throw InputError("entropy_scale must be a finite non-negative real");
    }
  } else {
    if (!(smoothing > 0.0)) throw InputError("smoothing must be positive");
    if (!counts) throw InputError("n-gram model has no count table");
  }
}

template <typename Scalar>
void logits_into(const LmSpec& spec, std::span<const TokenId> context,
                 Eigen::Ref<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> out) {
  const auto ctx = window(context, spec.order);
  const auto n = static_cast<Eigen::Index>(spec.vocab.size());
  if (spec.kind == LmKind::HashSynthetic) {
    const auto& g = quantile_table();
    const std::uint64_t base = mix64(spec.lm_seed ^ mix64(window_hash(ctx)));
    for (Eigen::Index t = 0; t < n; ++t) {
      const std::uint64_t u = mix64(base ^ (static_cast<std::uint64_t>(t) * kGolden));
      out[t] = static_cast<Scalar>(g[u >> 48]);
    }
    out *= static_cast<Scalar>(spec.entropy_scale);
    return;
  }
  const auto it = spec.counts->table.find(window_hash(ctx));
  if (it == spec.counts->table.end()) {
    out.setConstant(static_cast<Scalar>(std::log(spec.smoothing)));
  } else {
    out = (it->second.array() + spec.smoothing).log().matrix().template cast<Scalar>();
  }
}

template void logits_into<float>(const LmSpec&, std::span<const TokenId>,
                                 Eigen::Ref<Eigen::VectorXf>);
template void logits_into<double>(const LmSpec&, std::span<const TokenId>,
                                  Eigen::Ref<Eigen::VectorXd>);

Eigen::VectorXd logits(const LmSpec& spec, std::span<const TokenId> context) {
  check_ids(context, spec.vocab);
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.vocab.size()));
  logits_into<double>(spec, context, out);
  return out;
}

Eigen::VectorXd logits(const LmSpec& spec, const TokenSequence& context) {
  return logits(spec, std::span<const TokenId>(context.tokens));
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature) {
  const double inv_t = 1.0 / std::max(temperature, kGreedyTemperature);
  const double top = logits.maxCoeff();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd p =
      (logits.array() == kNegInf).select(0.0, ((logits.array() - top) * inv_t).exp()).matrix();
  return p / p.sum();
}

double entropy(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const Eigen::VectorXd p = softmax(logits);
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

template <typename Scalar>
TokenId sample_from_logits(const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& logits,
                           Rng& rng, double temperature,
                           Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& scratch) {
  Eigen::Index argmax = 0;
  const Scalar top = logits.maxCoeff(&argmax);
  if (top == -std::numeric_limits<Scalar>::infinity()) {
    throw InternalError("every token is disallowed");
  }
  if (!std::isfinite(top) || logits.hasNaN()) throw InternalError("non-finite logits");
  if (temperature < kGreedyTemperature) return static_cast<TokenId>(argmax);

  scratch = (logits.array() == -std::numeric_limits<Scalar>::infinity())
                .select(Scalar(0), ((logits.array() - top) * static_cast<Scalar>(1.0 / temperature)).exp())
                .matrix();
  const Scalar target = static_cast<Scalar>(rng.uniform()) * scratch.sum();

  // Locate the block holding the target with vectorized partial sums, then
  // scan inside it.
  constexpr Eigen::Index kBlock = 64;
  const Eigen::Index n = scratch.size();
  Scalar acc = 0;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, n - start);
    const Scalar block_sum = scratch.segment(start, len).sum();
    if (target < acc + block_sum) {
      for (Eigen::Index i = start; i < start + len; ++i) {
        acc += scratch[i];
        if (target < acc && scratch[i] > 0) return static_cast<TokenId>(i);
      }
      break;
    }
    acc += block_sum;
  }
  // Rounding left `target` at the very top: return the last allowed token.
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    if (scratch[i] > 0) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(argmax);
}

template TokenId sample_from_logits<float>(const Eigen::Ref<const Eigen::VectorXf>&, Rng&,
                                           double, Eigen::VectorXf&);
template TokenId sample_from_logits<double>(const Eigen::Ref<const Eigen::VectorXd>&, Rng&,
                                            double, Eigen::VectorXd&);

TokenId sample_next(const LmSpec& spec, const TokenSequence& context, Rng& rng,
                    double temperature) {
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  check_ids(context.tokens, spec.vocab);
  Eigen::VectorXf l(static_cast<Eigen::Index>(spec.vocab.size()));
  logits_into<float>(spec, context.tokens, l);
  Eigen::VectorXf scratch;
  return sample_from_logits<float>(l, rng, temperature, scratch);
}

TokenSequence generate(const LmSpec& spec, const TokenSequence& prompt, std::size_t length,
                       Rng& rng, double temperature) {
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  validate(prompt, spec.vocab);
  TokenSequence out;
  out.tokens.reserve(prompt.size() + length);
  out.tokens = prompt.tokens;
  out.prompt_len = prompt.size();
  Eigen::VectorXf l(static_cast<Eigen::Index>(spec.vocab.size()));
  Eigen::VectorXf scratch;
  for (std::size_t step = 0; step < length; ++step) {
    logits_into<float>(spec, out.tokens, l);
    out.tokens.push_back(sample_from_logits<float>(l, rng, temperature, scratch));
  }
  return out;
}

TokenSequence random_prompt(const Vocabulary& vocab, std::size_t len, Rng& rng) {
  TokenSequence p;
  p.tokens.resize(len);
  for (auto& t : p.tokens) t = static_cast<TokenId>(rng.below(vocab.size()));
  p.prompt_len = len;
  return p;
}

LmSpec train_ngram(const std::vector<TokenSequence>& corpus, std::size_t order,
                   double smoothing, std::optional<Vocabulary> vocab) {
  if (corpus.empty()) throw InputError("cannot train an n-gram model on an empty corpus");
  if (!(smoothing > 0.0)) throw InputError("smoothing must be positive");
  if (!vocab) {
    TokenId max_id = 1;
    for (const auto& seq : corpus) {
      for (TokenId t : seq.tokens) max_id = std::max(max_id, t);
    }
    vocab = Vocabulary(static_cast<std::size_t>(max_id) + 1);
  }
  auto counts = std::make_shared<NgramCounts>();
  const auto n = static_cast<Eigen::Index>(vocab->size());
  for (const auto& seq : corpus) {
    validate(seq, *vocab);
    const std::span<const TokenId> toks(seq.tokens);
    for (std::size_t i = 0; i < toks.size(); ++i) {
      const auto key = window_hash(window(toks.first(i), order));
      auto [it, inserted] = counts->table.try_emplace(key);
      if (inserted) it->second = Eigen::VectorXd::Zero(n);
      it->second[toks[i]] += 1.0;
    }
  }
  LmSpec spec;
  spec.kind = LmKind::NgramCounts;
  spec.vocab = *vocab;
  spec.order = order;
  spec.smoothing = smoothing;
  spec.counts = std::move(counts);
  return spec;
}

std::vector<TokenSequence> read_corpus(std::istream& in) {
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string field;
    TokenSequence seq;
    while (fields >> field) {
      unsigned long long v = 0;
      const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || end != field.data() + field.size() ||
          v > std::numeric_limits<TokenId>::max()) {
        throw InputError("line " + std::to_string(line_no) + ": malformed token '" + field +
                         "'");
      }
      seq.tokens.push_back(static_cast<TokenId>(v));
    }
    if (!seq.tokens.empty()) out.push_back(std::move(seq));
  }
  return out;
}

std::vector<TokenSequence> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus file '" + path + "'");
  return read_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<TokenSequence>& corpus) {
  for (const auto& seq : corpus) {
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
      if (i) out << ' ';
      out << seq.tokens[i];
    }
    out << '\n';
  }
}

}  // namespace mkwm
