// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic pre-norm decoder-only transformer used as a hookable testbed.
//
// Vocabulary layout:
//   0 YES | 1 NO | 2 UNC | 3 BOS | 4 .. 4+k-1 post-instruction template | content
//
// A sample renders as BOS, image tokens hashed from image_ref, one hashed token
// per description word, then the k template tokens. Every layer exposes the
// residual before attention and after the attention update; the MLP update is
// not hooked.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/container.hpp"
#include "steerlab/error.hpp"
#include "steerlab/parallel.hpp"
#include "steerlab/random.hpp"
#include "steerlab/types.hpp"

namespace steerlab {

namespace token {
inline constexpr int kYes = 0;
inline constexpr int kNo = 1;
inline constexpr int kUnc = 2;
inline constexpr int kBos = 3;
inline constexpr int kTemplateBase = 4;
}  // namespace token

struct ToyModelConfig {
  std::uint64_t seed = 7;
  int num_layers = 4;
  int d_model = 32;
  int num_heads = 4;
  int vocab_size = 256;
  int max_seq_len = 256;
  int template_len = 5;
  int image_tokens = 4;

  bool operator==(const ToyModelConfig&) const = default;
};

enum class HookPoint { kPreAttention, kPostAttention };

// Residual transform applied in place at every hook point of every layer and
// every position.
using ResidualHook = std::function<void(HookPoint, int layer, std::span<double> residual)>;

struct LayerWeights {
  // Row-major (out x in).
  std::vector<double> wq, wk, wv, wo;
  std::vector<double> w_in;   // d_ff x d_model
  std::vector<double> w_out;  // d_model x d_ff

  bool operator==(const LayerWeights&) const = default;
};

struct ToyModel {
  ToyModelConfig config;
  int d_ff = 0;
  std::vector<double> token_embedding;     // vocab x d_model
  std::vector<double> position_embedding;  // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  std::vector<double> unembedding;         // vocab x d_model
  std::vector<double> output_bias;         // vocab, zero at init

  int content_base() const noexcept { return token::kTemplateBase + config.template_len; }
  int content_size() const noexcept { return config.vocab_size - content_base(); }

  bool operator==(const ToyModel&) const = default;
};

namespace detail {

inline void fill_normal(std::vector<double>& w, std::size_t n, double stddev, Rng& rng) {
  w.resize(n);
  for (auto& x : w) x = stddev * rng.normal();
}

// y = W x for row-major W (rows x cols).
inline void matvec(std::span<const double> w, std::span<const double> x, std::span<double> y) {
  const std::size_t cols = x.size();
  for (std::size_t r = 0; r < y.size(); ++r) {
    const double* row = w.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

inline void rms_norm(std::span<const double> x, std::span<double> out) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double scale = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] * scale;
}

inline double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

}  // namespace detail

inline ToyModel init_toy_model(const ToyModelConfig& config) {
  if (config.num_layers < 1) raise(ErrorKind::kConfig, "num_layers must be >= 1");
  if (config.d_model < 1 || config.num_heads < 1) raise(ErrorKind::kConfig, "d_model and num_heads must be >= 1");
  if (config.d_model % config.num_heads != 0) {
    raise(ErrorKind::kConfig, "d_model " + std::to_string(config.d_model) + " not divisible by num_heads " +
                                  std::to_string(config.num_heads));
  }
  if (config.template_len < 1) raise(ErrorKind::kConfig, "template_len must be >= 1");
  if (config.image_tokens < 0) raise(ErrorKind::kConfig, "image_tokens must be >= 0");
  if (config.vocab_size < token::kTemplateBase + config.template_len + 1) {
    raise(ErrorKind::kConfig, "vocab_size too small for reserved and template tokens");
  }
  if (config.max_seq_len < config.template_len + 1 + config.image_tokens) {
    raise(ErrorKind::kConfig, "max_seq_len shorter than the fixed prompt scaffold");
  }

  ToyModel m;
  m.config = config;
  const auto d = static_cast<std::size_t>(config.d_model);
  m.d_ff = 4 * config.d_model;
  const auto ff = static_cast<std::size_t>(m.d_ff);
  const auto vocab = static_cast<std::size_t>(config.vocab_size);

  Rng rng(config.seed);
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = in_std / std::sqrt(2.0 * config.num_layers);
  detail::fill_normal(m.token_embedding, vocab * d, 1.0, rng);
  detail::fill_normal(m.position_embedding, static_cast<std::size_t>(config.max_seq_len) * d, 0.1, rng);
  m.layers.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& layer : m.layers) {
    detail::fill_normal(layer.wq, d * d, in_std, rng);
    detail::fill_normal(layer.wk, d * d, in_std, rng);
    detail::fill_normal(layer.wv, d * d, in_std, rng);
    detail::fill_normal(layer.wo, d * d, out_std, rng);
    detail::fill_normal(layer.w_in, ff * d, in_std, rng);
    detail::fill_normal(layer.w_out, d * ff, 1.0 / std::sqrt(static_cast<double>(ff) * 2.0 * config.num_layers), rng);
  }
  detail::fill_normal(m.unembedding, vocab * d, in_std, rng);
  m.output_bias.assign(vocab, 0.0);
  return m;
}

inline ToyModel init_toy_model(std::uint64_t seed, int num_layers, int d_model, int num_heads, int vocab_size) {
  ToyModelConfig config;
  config.seed = seed;
  config.num_layers = num_layers;
  config.d_model = d_model;
  config.num_heads = num_heads;
  config.vocab_size = vocab_size;
  return init_toy_model(config);
}

inline int content_token(const ToyModel& model, std::string_view word) {
  return model.content_base() + static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(model.content_size()));
}

inline std::vector<int> render_tokens(const ToyModel& model, const SampleRecord& sample) {
  std::vector<int> tokens{token::kBos};
  for (int j = 0; j < model.config.image_tokens; ++j) {
    tokens.push_back(content_token(model, sample.image_ref + "#img" + std::to_string(j)));
  }
  std::istringstream words(sample.description);
  for (std::string w; words >> w;) tokens.push_back(content_token(model, w));
  for (int j = 0; j < model.config.template_len; ++j) tokens.push_back(token::kTemplateBase + j);
  return tokens;
}

struct ForwardResult {
  std::vector<double> logits;                  // full vocabulary, final position
  std::vector<ActivationRecord> activations;   // pre-attention residuals, layer-major
};

struct CaptureRequest {
  std::string sample_id;
  std::span<const int> offsets;
};

// Without a hook, captured residuals are the clean activations. With a hook,
// they are read after the hook has run at the pre-attention point.
inline ForwardResult forward(const ToyModel& model, std::span<const int> tokens, const ResidualHook* hook = nullptr,
                             const CaptureRequest* capture = nullptr) {
  const auto& cfg = model.config;
  if (tokens.empty()) raise(ErrorKind::kInput, "empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    raise(ErrorKind::kInput, "sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq_len " +
                                 std::to_string(cfg.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) raise(ErrorKind::kInput, "unknown token id " + std::to_string(t));
  }
  if (capture) {
    for (int off : capture->offsets) {
      if (off >= 0 || static_cast<std::size_t>(-off) > tokens.size()) {
        raise(ErrorKind::kInput, "sample '" + capture->sample_id + "' too short for offset " + std::to_string(off));
      }
    }
  }

  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto n = tokens.size();
  const auto heads = static_cast<std::size_t>(cfg.num_heads);
  const std::size_t dh = d / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> x(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    const auto tok = static_cast<std::size_t>(tokens[p]);
    for (std::size_t k = 0; k < d; ++k) {
      x[p * d + k] = model.token_embedding[tok * d + k] + model.position_embedding[p * d + k];
    }
  }
  auto row = [&](std::vector<double>& buf, std::size_t p, std::size_t width) {
    return std::span<double>(buf.data() + p * width, width);
  };

  ForwardResult result;
  std::vector<double> h(n * d), q(n * d), k(n * d), v(n * d), ctx(n * d), upd(d);
  std::vector<double> hidden(static_cast<std::size_t>(model.d_ff)), scores(n);

  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& w = model.layers[static_cast<std::size_t>(l)];
    if (hook) {
      for (std::size_t p = 0; p < n; ++p) (*hook)(HookPoint::kPreAttention, l, row(x, p, d));
    }
    if (capture) {
      for (int off : capture->offsets) {
        const std::size_t p = n - static_cast<std::size_t>(-off);
        ActivationRecord rec;
        rec.sample_id = capture->sample_id;
        rec.layer = static_cast<std::uint32_t>(l);
        rec.offset = off;
        rec.vector.reserve(d);
        for (std::size_t c = 0; c < d; ++c) rec.vector.push_back(static_cast<float>(x[p * d + c]));
        result.activations.push_back(std::move(rec));
      }
    }

    for (std::size_t p = 0; p < n; ++p) {
      detail::rms_norm(row(x, p, d), row(h, p, d));
      detail::matvec(w.wq, row(h, p, d), row(q, p, d));
      detail::matvec(w.wk, row(h, p, d), row(k, p, d));
      detail::matvec(w.wv, row(h, p, d), row(v, p, d));
    }
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t base = hd * dh;
      for (std::size_t p = 0; p < n; ++p) {
        double max_score = -INFINITY;
        for (std::size_t j = 0; j <= p; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[p * d + base + c] * k[j * d + base + c];
          scores[j] = s * inv_sqrt_dh;
          max_score = std::max(max_score, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j <= p; ++j) {
          scores[j] = std::exp(scores[j] - max_score);
          total += scores[j];
        }
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t j = 0; j <= p; ++j) acc += scores[j] * v[j * d + base + c];
          ctx[p * d + base + c] = acc / total;
        }
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      detail::matvec(w.wo, row(ctx, p, d), upd);
      for (std::size_t c = 0; c < d; ++c) x[p * d + c] += upd[c];
    }

    if (hook) {
      for (std::size_t p = 0; p < n; ++p) (*hook)(HookPoint::kPostAttention, l, row(x, p, d));
    }

    for (std::size_t p = 0; p < n; ++p) {
      detail::rms_norm(row(x, p, d), row(h, p, d));
      detail::matvec(w.w_in, row(h, p, d), hidden);
      for (auto& a : hidden) a = detail::gelu(a);
      detail::matvec(w.w_out, hidden, upd);
      for (std::size_t c = 0; c < d; ++c) x[p * d + c] += upd[c];
    }
  }

  std::vector<double> last(d);
  detail::rms_norm(row(x, n - 1, d), last);
  result.logits.resize(static_cast<std::size_t>(cfg.vocab_size));
  detail::matvec(model.unembedding, last, result.logits);
  for (std::size_t t = 0; t < result.logits.size(); ++t) result.logits[t] += model.output_bias[t];
  return result;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - max_logit);
  const double log_z = max_logit + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - log_z;
  return out;
}

struct AnswerProbs {
  double yes = 0.0;
  double no = 0.0;
  double unc = 0.0;

  bool operator==(const AnswerProbs&) const = default;
};

// Softmax restricted to the three answer-token logits.
inline AnswerProbs answer_probs_from_logits(double yes_logit, double no_logit, double unc_logit) {
  const double m = std::max({yes_logit, no_logit, unc_logit});
  const double ey = std::exp(yes_logit - m), en = std::exp(no_logit - m), eu = std::exp(unc_logit - m);
  const double total = ey + en + eu;
  return {ey / total, en / total, eu / total};
}

inline AnswerProbs answer_probs_from_logits(std::span<const double> logits) {
  return answer_probs_from_logits(logits[token::kYes], logits[token::kNo], logits[token::kUnc]);
}

inline AnswerProbs answer_probabilities(const ToyModel& model, const SampleRecord& sample,
                                        const ResidualHook* hook = nullptr) {
  const auto tokens = render_tokens(model, sample);
  return answer_probs_from_logits(forward(model, tokens, hook).logits);
}

inline ModelGeometry model_geometry(const ToyModel& model, std::vector<int> offsets) {
  ModelGeometry g{model.config.num_layers, model.config.d_model, std::move(offsets)};
  g.validate();
  return g;
}

// One clean forward pass per sample; records are layer-major within a sample
// and samples appear in ascending sample_id order.
inline ActivationContainer record_activations(const ToyModel& model, std::span<const SampleRecord> samples,
                                              std::span<const int> offsets, unsigned threads = 1) {
  auto geometry = model_geometry(model, std::vector<int>(offsets.begin(), offsets.end()));
  std::vector<const SampleRecord*> order;
  for (const auto& s : samples) order.push_back(&s);
  std::sort(order.begin(), order.end(),
            [](const SampleRecord* a, const SampleRecord* b) { return a->sample_id < b->sample_id; });

  const int deepest = *std::min_element(offsets.begin(), offsets.end());
  std::vector<std::vector<int>> token_lists(order.size());
  std::string short_ids;
  for (std::size_t k = 0; k < order.size(); ++k) {
    token_lists[k] = render_tokens(model, *order[k]);
    if (token_lists[k].size() < static_cast<std::size_t>(-deepest)) {
      short_ids += (short_ids.empty() ? "" : ", ") + order[k]->sample_id;
    }
  }
  if (!short_ids.empty()) {
    raise(ErrorKind::kInput, "sequences shorter than " + std::to_string(-deepest) + " tokens: " + short_ids);
  }

  std::vector<std::vector<ActivationRecord>> per_sample(order.size());
  parallel_for(order.size(), threads, [&](std::size_t k) {
    CaptureRequest req{order[k]->sample_id, offsets};
    per_sample[k] = forward(model, token_lists[k], nullptr, &req).activations;
  });
  ActivationContainer container(geometry);
  for (auto& recs : per_sample) {
    for (auto& rec : recs) container.add(std::move(rec));
  }
  return container;
}

struct PlantOptions {
  std::vector<double> direction;     // unit, length d_model
  std::string marker_word = "purple";
  double shift = 4.0;                // marker embedding becomes shift * u
  double answer_gain = 3.0;          // YES/NO unembedding rows gain +/- gain * u
};

// Rewires a model so a single planted direction u carries the hallucination
// signal end to end: the marker token embeds as shift * u and nothing else writes u, attention is
// uniform and copies the normed residual, the MLPs neither read nor write u,
// and only the YES/NO logits read u (with opposite signs).
inline void plant_answer_direction(ToyModel& model, const PlantOptions& opts) {
  const auto d = static_cast<std::size_t>(model.config.d_model);
  const auto& u = opts.direction;
  if (u.size() != d) raise(ErrorKind::kShape, "planted direction length differs from d_model");
  if (std::abs(l2_norm(u) - 1.0) > 1e-9) raise(ErrorKind::kContract, "planted direction is not unit");

  auto project_out_rows = [&](std::vector<double>& w, std::size_t rows) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::span<double> row(w.data() + r * d, d);
      const double c = dot(row, u);
      for (std::size_t k = 0; k < d; ++k) row[k] -= c * u[k];
    }
  };
  const auto vocab = static_cast<std::size_t>(model.config.vocab_size);
  project_out_rows(model.token_embedding, vocab);
  project_out_rows(model.position_embedding, static_cast<std::size_t>(model.config.max_seq_len));
  project_out_rows(model.unembedding, vocab);

  const auto marker = static_cast<std::size_t>(content_token(model, opts.marker_word));
  for (std::size_t k = 0; k < d; ++k) {
    // The marker's embedding is pure signal so the class-mean difference
    // points along u rather than along the marker's random row.
    model.token_embedding[marker * d + k] = opts.shift * u[k];
    model.unembedding[token::kYes * d + k] += opts.answer_gain * u[k];
    model.unembedding[token::kNo * d + k] -= opts.answer_gain * u[k];
  }

  const auto ff = static_cast<std::size_t>(model.d_ff);
  for (auto& layer : model.layers) {
    std::fill(layer.wq.begin(), layer.wq.end(), 0.0);
    std::fill(layer.wk.begin(), layer.wk.end(), 0.0);
    std::fill(layer.wv.begin(), layer.wv.end(), 0.0);
    std::fill(layer.wo.begin(), layer.wo.end(), 0.0);
    for (std::size_t k = 0; k < d; ++k) {
      layer.wv[k * d + k] = 1.0;
      layer.wo[k * d + k] = 1.0;
    }
    project_out_rows(layer.w_in, ff);
    // Columns of w_out are the MLP's write directions: (I - u u^T) w_out.
    for (std::size_t c = 0; c < ff; ++c) {
      double proj = 0.0;
      for (std::size_t r = 0; r < d; ++r) proj += u[r] * layer.w_out[r * ff + c];
      for (std::size_t r = 0; r < d; ++r) layer.w_out[r * ff + c] -= proj * u[r];
    }
  }
}

}  // namespace steerlab
