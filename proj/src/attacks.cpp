#include "mkwm/attacks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>

#include "mkwm/hash.hpp"

namespace mkwm {

namespace {

std::size_t bucket_count_for(std::size_t order, std::size_t vocab, std::size_t max_buckets) {
  if (order == 0) return 0;
  if (order == 1) return vocab;
  double full = 1.0;
  for (std::size_t i = 0; i < order; ++i) full *= static_cast<double>(vocab);
  return static_cast<std::size_t>(std::min(full, static_cast<double>(max_buckets)));
}

}  // namespace

std::size_t StolenSignal::bucket_of(std::span<const TokenId> context) const {
  if (context_order == 0 || context.empty()) return 0;
  if (context_order == 1) return context.back();
  const auto window = context.last(std::min(context_order, context.size()));
  return static_cast<std::size_t>(window_hash(window) % bucket_count());
}

void StolenSignal::apply(std::span<const TokenId> context, float strength,
                         Eigen::Ref<Eigen::VectorXf> logits) const {
  if (context_order > 0 && !context.empty()) {
    const std::size_t b = bucket_of(context);
    if (bucket_mass[static_cast<Eigen::Index>(b)] >= min_bucket_count) {
      logits += strength * scores.row(static_cast<Eigen::Index>(b)).transpose();
      return;
    }
  }
  logits += strength * pooled;
}

StolenSignal steal(std::span<const TokenSequence> samples, const LmSpec& base,
                   const StealOptions& options) {
  if (samples.empty()) throw InputError("steal needs at least one sample");
  if (!(options.pseudo_count > 0.0)) throw InputError("pseudo_count must be positive");
  const std::size_t vocab = base.vocab.size();
  const auto n = static_cast<Eigen::Index>(vocab);

  StolenSignal sig;
  sig.context_order = options.order;
  sig.n_samples = samples.size();
  sig.vocab_size = vocab;
  sig.pseudo_count = options.pseudo_count;
  sig.min_bucket_count = options.min_bucket_count;
  const auto buckets =
      static_cast<Eigen::Index>(bucket_count_for(options.order, vocab, options.max_buckets));

  ScoreTable observed = ScoreTable::Zero(buckets, n);
  ScoreTable expected = ScoreTable::Zero(buckets, n);
  Eigen::VectorXd pooled_obs = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd pooled_exp = Eigen::VectorXd::Zero(n);
  sig.bucket_mass = Eigen::VectorXf::Zero(buckets);
  sig.scores.resize(buckets, n);  // bucket_of needs the row count

  Eigen::VectorXf l(n);
  Eigen::VectorXf p(n);
  for (const auto& seq : samples) {
    validate(seq, base.vocab);
    const std::span<const TokenId> toks(seq.tokens);
    for (std::size_t i = seq.prompt_len; i < toks.size(); ++i) {
      const auto context = toks.first(i);
      logits_into<float>(base, context, l);
      const float top = l.maxCoeff();
      p = (l.array() - top).exp().matrix();
      p /= p.sum();
      pooled_exp += p.cast<double>();
      pooled_obs[toks[i]] += 1.0;
      if (buckets > 0 && !context.empty()) {
        const auto b = static_cast<Eigen::Index>(sig.bucket_of(context));
        expected.row(b) += p.transpose();
        observed(b, toks[i]) += 1.0f;
        sig.bucket_mass[b] += 1.0f;
      }
    }
  }

  const auto c = static_cast<float>(options.pseudo_count);
  sig.pooled = ((pooled_obs.array() + options.pseudo_count) /
                (pooled_exp.array() + options.pseudo_count))
                   .log()
                   .cast<float>()
                   .matrix();
  sig.scores = ((observed.array() + c) / (expected.array() + c)).log().matrix();
  return sig;
}

TokenSequence forge(const StolenSignal& signal, const LmSpec& base, const TokenSequence& prompt,
                    std::size_t length, double strength, Rng& rng, double temperature) {
  if (signal.vocab_size != base.vocab.size()) {
    throw InputError("stolen signal and base model disagree on vocabulary size");
  }
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  validate(prompt, base.vocab);
  TokenSequence out;
  out.tokens.reserve(prompt.size() + length);
  out.tokens = prompt.tokens;
  out.prompt_len = prompt.size();
  Eigen::VectorXf l(static_cast<Eigen::Index>(base.vocab.size()));
  Eigen::VectorXf scratch;
  const auto s = static_cast<float>(strength);
  for (std::size_t step = 0; step < length; ++step) {
    logits_into<float>(base, out.tokens, l);
    if (strength != 0.0) signal.apply(out.tokens, s, l);
    out.tokens.push_back(sample_from_logits<float>(l, rng, temperature, scratch));
  }
  return out;
}

namespace {

constexpr char kSignalMagic[8] = {'M', 'K', 'W', 'M', 'S', 'I', 'G', '1'};

static_assert(std::endian::native == std::endian::little,
              "signal serialization assumes a little-endian host");

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InputError("truncated stolen-signal file");
  return v;
}

void put_floats(std::ostream& out, const float* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(float)));
}

void get_floats(std::istream& in, float* data, std::size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw InputError("truncated stolen-signal file");
}

}  // namespace

void write_signal(std::ostream& out, const StolenSignal& signal) {
  out.write(kSignalMagic, sizeof(kSignalMagic));
  put<std::uint64_t>(out, signal.context_order);
  put<std::uint64_t>(out, signal.n_samples);
  put<std::uint64_t>(out, signal.vocab_size);
  put<std::uint64_t>(out, signal.bucket_count());
  put<double>(out, signal.pseudo_count);
  put<double>(out, signal.min_bucket_count);
  put_floats(out, signal.pooled.data(), static_cast<std::size_t>(signal.pooled.size()));
  put_floats(out, signal.bucket_mass.data(), static_cast<std::size_t>(signal.bucket_mass.size()));
  put_floats(out, signal.scores.data(), static_cast<std::size_t>(signal.scores.size()));
}

StolenSignal read_signal(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kSignalMagic, sizeof(magic)) != 0) {
    throw InputError("not a stolen-signal file");
  }
  StolenSignal sig;
  sig.context_order = get<std::uint64_t>(in);
  sig.n_samples = get<std::uint64_t>(in);
  sig.vocab_size = get<std::uint64_t>(in);
  const auto buckets = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  sig.pseudo_count = get<double>(in);
  sig.min_bucket_count = get<double>(in);
  const auto v = static_cast<Eigen::Index>(sig.vocab_size);
  if (v < 2 || buckets < 0 || buckets > (Eigen::Index{1} << 24)) {
    throw InputError("corrupt stolen-signal header");
  }
  sig.pooled.resize(v);
  sig.bucket_mass.resize(buckets);
  sig.scores.resize(buckets, v);
  get_floats(in, sig.pooled.data(), static_cast<std::size_t>(v));
  get_floats(in, sig.bucket_mass.data(), static_cast<std::size_t>(buckets));
  get_floats(in, sig.scores.data(), static_cast<std::size_t>(sig.scores.size()));
  return sig;
}

std::vector<std::size_t> ClusterAssignment::cluster_sizes() const {
  std::vector<std::size_t> sizes(r_hat, 0);
  for (auto l : labels) ++sizes.at(l);
  return sizes;
}

std::size_t ClusterAssignment::largest_cluster() const {
  const auto sizes = cluster_sizes();
  return static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
}

Eigen::MatrixXd cluster_features(std::span<const TokenSequence> samples, std::size_t vocab_size,
                                 ClusterFeatures kind) {
  const auto rows = static_cast<Eigen::Index>(samples.size());
  const auto cols = static_cast<Eigen::Index>(vocab_size);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(rows, cols);
  for (Eigen::Index s = 0; s < rows; ++s) {
    const auto& seq = samples[static_cast<std::size_t>(s)];
    const std::span<const TokenId> toks(seq.tokens);
    double total = 0.0;
    for (std::size_t i = seq.prompt_len; i < toks.size(); ++i) {
      if (toks[i] >= vocab_size) throw InputError("token id outside the vocabulary");
      Eigen::Index dim = toks[i];
      if (kind == ClusterFeatures::TransitionSignature) {
        if (i == 0) continue;
        dim = static_cast<Eigen::Index>(mix64(token_hash(toks[i - 1]) ^ toks[i]) % vocab_size);
      }
      x(s, dim) += 1.0;
      total += 1.0;
    }
    if (total > 0.0) x.row(s) /= total;
  }
  return x;
}

double clustering_accuracy(std::span<const std::size_t> labels, std::size_t r_hat,
                           std::span<const std::size_t> truth) {
  if (labels.size() != truth.size()) throw InputError("label and truth lengths differ");
  if (labels.empty()) return 1.0;
  const std::size_t m = *std::max_element(truth.begin(), truth.end()) + 1;
  Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r_hat),
                                                    static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    confusion(static_cast<Eigen::Index>(labels[i]), static_cast<Eigen::Index>(truth[i])) += 1.0;
  }
  const auto n = static_cast<double>(labels.size());
  if (r_hat > m) return confusion.rowwise().maxCoeff().sum() / n;

  double best = 0.0;
  if (m <= 6) {
    // Cluster c maps to truth perm[c]; truth labels beyond r_hat stay unmatched.
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      double hit = 0.0;
      for (std::size_t c = 0; c < r_hat; ++c) {
        hit += confusion(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(perm[c]));
      }
      best = std::max(best, hit);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / n;
  }
  // Greedy: repeatedly take the largest remaining cell.
  Eigen::MatrixXd work = confusion;
  for (std::size_t step = 0; step < r_hat; ++step) {
    Eigen::Index row = 0;
    Eigen::Index col = 0;
    const double v = work.maxCoeff(&row, &col);
    if (v < 0.0) break;
    best += v;
    work.row(row).setConstant(-1.0);
    work.col(col).setConstant(-1.0);
  }
  return best / n;
}

ClusterAssignment cluster_by_key(std::span<const TokenSequence> samples, std::size_t vocab_size,
                                 std::size_t r_hat, const ClusterOptions& options, Rng& rng,
                                 std::optional<std::span<const std::size_t>> oracle_labels) {
  if (r_hat < 2) throw InputError("r_hat must be at least 2");
  if (r_hat > samples.size()) throw InputError("r_hat exceeds the number of samples");

  Eigen::MatrixXd x = cluster_features(samples, vocab_size, options.features);
  if (options.top_k_dims > 0 && options.top_k_dims < static_cast<std::size_t>(x.cols())) {
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().sum();
    std::vector<Eigen::Index> dims(static_cast<std::size_t>(x.cols()));
    std::iota(dims.begin(), dims.end(), 0);
    std::stable_sort(dims.begin(), dims.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return var[a] > var[b]; });
    dims.resize(options.top_k_dims);
    std::sort(dims.begin(), dims.end());
    Eigen::MatrixXd projected(x.rows(), static_cast<Eigen::Index>(dims.size()));
    for (std::size_t j = 0; j < dims.size(); ++j) {
      projected.col(static_cast<Eigen::Index>(j)) = x.col(dims[j]);
    }
    x = std::move(projected);
  }

  const Eigen::Index n = x.rows();
  const auto k = static_cast<Eigen::Index>(r_hat);
  const Eigen::VectorXd sq_norms = x.rowwise().squaredNorm();

  // Farthest-point initialization.
  Eigen::MatrixXd centers(k, x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd nearest = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index c = 1; c < k; ++c) {
    Eigen::Index far = 0;
    nearest.maxCoeff(&far);
    centers.row(c) = x.row(far);
    nearest = nearest.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<std::size_t> labels(static_cast<std::size_t>(n), 0);
  for (std::size_t iter = 0; iter < std::max<std::size_t>(options.iters, 1); ++iter) {
    const Eigen::MatrixXd dist =
        (-2.0 * x * centers.transpose()).colwise() + sq_norms;
    const Eigen::VectorXd center_norms = centers.rowwise().squaredNorm();
    bool changed = iter == 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (dist.row(i) + center_norms.transpose()).minCoeff(&best);
      if (labels[static_cast<std::size_t>(i)] != static_cast<std::size_t>(best)) {
        labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]);
      sums.row(c) += x.row(i);
      counts[c] += 1.0;
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[c] > 0.0) centers.row(c) = sums.row(c) / counts[c];
    }
  }

  ClusterAssignment out;
  out.labels = std::move(labels);
  out.r_hat = r_hat;
  if (oracle_labels) out.accuracy = clustering_accuracy(out.labels, r_hat, *oracle_labels);
  return out;
}

std::vector<TokenSequence> largest_cluster_samples(std::span<const TokenSequence> samples,
                                                   const ClusterAssignment& assignment) {
  if (assignment.labels.size() != samples.size()) {
    throw InputError("assignment does not cover the samples");
  }
  const std::size_t target = assignment.largest_cluster();
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (assignment.labels[i] == target) out.push_back(samples[i]);
  }
  return out;
}

TokenSequence adaptive_forge(std::span<const TokenSequence> samples,
                             const ClusterAssignment& assignment, const LmSpec& base,
                             const TokenSequence& prompt, std::size_t length, double strength,
                             Rng& rng, const StealOptions& options) {
  const auto cluster = largest_cluster_samples(samples, assignment);
  const auto signal = steal(cluster, base, options);
  return forge(signal, base, prompt, length, strength, rng);
}

}  // namespace mkwm
