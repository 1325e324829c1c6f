#ifndef SLUREJ_REJECTION_HPP_
#define SLUREJ_REJECTION_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slurej/common.hpp"
#include "slurej/rates.hpp"
#include "slurej/slu.hpp"
#include "slurej/types.hpp"

namespace slurej {

inline constexpr std::size_t kAsrFeatureCount = 5;
using AsrVector = std::array<double, kAsrFeatureCount>;

/// Which feature groups feed the rejection model. The SLU score is always
/// used; the groups nest: score < +utterance < +hypothesis < +asr.
struct FeatureFlags {
  bool utterance = true;
  bool hypothesis = true;
  bool asr = false;

  friend bool operator==(const FeatureFlags&, const FeatureFlags&) = default;

  /// Comma list over {score, utt, hyp, asr}.
  static FeatureFlags parse(const std::string& list) {
    FeatureFlags f{false, false, false};
    bool score = false;
    std::string item;
    auto take = [&](std::string s) {
      if (s.empty()) return;
      if (s == "score") score = true;
      else if (s == "utt" || s == "utterance") f.utterance = true;
      else if (s == "hyp" || s == "hypothesis") f.hypothesis = true;
      else if (s == "asr") f.asr = true;
      else throw ValidationError("features: unknown feature group '" + s + "'");
    };
    for (char c : list) {
      if (c == ',' || c == '+') take(std::move(item)), item.clear();
      else if (c != ' ') item.push_back(c);
    }
    take(std::move(item));
    if (!score) throw ValidationError("features: 'score' is always required");
    f.validate();
    return f;
  }

  void validate() const {
    if ((hypothesis && !utterance) || (asr && !hypothesis)) {
      throw ValidationError(
          "features: combination outside the ablation lattice "
          "score < score,utt < score,utt,hyp < score,utt,hyp,asr");
    }
  }

  std::string key() const {
    std::string k = "score";
    if (utterance) k += "+utt";
    if (hypothesis) k += "+hyp";
    if (asr) k += "+asr";
    return k;
  }
};

struct HypothesisIds {
  int domain = 0;
  int intent = 0;
  std::vector<int> slots;
};

/// Model-ready input for one (utterance, hypothesis) pair.
struct FeatureBundle {
  std::vector<int> word_ids;
  HypothesisIds hyp_ids;
  double slu_score = 0.0;
  std::optional<AsrVector> asr_features;
  std::optional<Decision> label;
};

/// Un-encoded source of a FeatureBundle: what the training-set builders and
/// decoders produce before a vocabulary exists.
struct HypothesisSample {
  std::string utterance_id;
  std::vector<std::string> tokens;
  SluHypothesis hypothesis;
  std::optional<AsrVector> asr_features;
  bool hypothesis_correct = false;

  Decision label() const {
    return hypothesis_correct ? Decision::Accept : Decision::Reject;
  }

  friend bool operator==(const HypothesisSample&, const HypothesisSample&) = default;
};

enum class VocabScope { SingleDomain, AllDomains };

/// Label inventory of one domain, as the SLU system can emit it.
struct DomainLabels {
  std::string domain;
  std::vector<std::string> intents;
  std::vector<std::string> slot_labels;
};

inline std::vector<DomainLabels> domain_labels(const DomainModels& m) {
  std::vector<DomainLabels> out;
  for (const auto& d : m.domains) {
    out.push_back({d.domain, d.intents,
                   std::vector<std::string>(d.tags.begin() + 1, d.tags.end())});
  }
  return out;
}

/// Slot labels of a tagging in order of appearance, one per contiguous run.
inline std::vector<std::string> slot_sequence(
    const std::vector<std::string>& tagging) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tagging.size(); ++i) {
    if (tagging[i] == kOutsideTag) continue;
    if (i == 0 || tagging[i - 1] != tagging[i]) out.push_back(tagging[i]);
  }
  return out;
}

class RejectionVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kOov = 1;
  static constexpr int kSep = 1;

  RejectionVocab() {
    words_.add("<pad>");
    words_.add("<oov>");
    labels_.add("<pad>");
    labels_.add("<sep>");
  }

  int word_id(const std::string& tok) const {
    const int id = words_.lookup(tok);
    return id < 0 ? kOov : id;
  }

  int label_id(const std::string& kind, const std::string& name) const {
    const int id = labels_.lookup(kind + ":" + name);
    if (id < 0) {
      throw ValidationError("hypothesis label '" + kind + ":" + name +
                            "' outside the rejection vocabulary");
    }
    return id;
  }

  bool has_label(const std::string& kind, const std::string& name) const {
    return labels_.lookup(kind + ":" + name) >= 0;
  }

  std::size_t word_count() const { return words_.size(); }
  std::size_t label_count() const { return labels_.size(); }
  const Vocabulary& words() const { return words_; }
  const Vocabulary& labels() const { return labels_; }
  VocabScope scope() const { return scope_; }

  friend bool operator==(const RejectionVocab& a, const RejectionVocab& b) {
    return a.words_ == b.words_ && a.labels_ == b.labels_ && a.scope_ == b.scope_;
  }

 private:
  template <typename S>
  friend RejectionVocab build_vocab(const S&, VocabScope,
                                    std::span<const DomainLabels>);
  friend RejectionVocab vocab_from_json(const nlohmann::json&);

  Vocabulary words_;
  Vocabulary labels_;
  VocabScope scope_ = VocabScope::AllDomains;
};

/// Word vocabulary over the training tokens plus PAD/OOV; hypothesis
/// vocabulary over one domain's labels or over all of them.
template <typename Samples>
RejectionVocab build_vocab(const Samples& samples, VocabScope scope,
                           std::span<const DomainLabels> labels) {
  if (std::empty(samples)) throw ValidationError("build_vocab: no examples");
  if (labels.empty()) throw ValidationError("build_vocab: no domain labels");
  if (scope == VocabScope::SingleDomain && labels.size() != 1) {
    throw ValidationError(
        "build_vocab: single-domain scope takes exactly one domain");
  }
  RejectionVocab v;
  v.scope_ = scope;
  for (const auto& s : samples) {
    for (const auto& t : s.tokens) v.words_.add(t);
  }
  for (const auto& d : labels) v.labels_.add("d:" + d.domain);
  for (const auto& d : labels) {
    for (const auto& i : d.intents) v.labels_.add("i:" + i);
  }
  for (const auto& d : labels) {
    for (const auto& s : d.slot_labels) v.labels_.add("s:" + s);
  }
  return v;
}

inline FeatureBundle encode(const RejectionVocab& vocab,
                            const HypothesisSample& s, bool with_label = true) {
  FeatureBundle b;
  for (const auto& t : s.tokens) b.word_ids.push_back(vocab.word_id(t));
  b.hyp_ids.domain = vocab.label_id("d", s.hypothesis.domain);
  b.hyp_ids.intent = vocab.label_id("i", s.hypothesis.intent);
  for (const auto& l : slot_sequence(s.hypothesis.tagging)) {
    b.hyp_ids.slots.push_back(vocab.label_id("s", l));
  }
  b.slu_score = s.hypothesis.slu_score.value_or(0.0);
  b.asr_features = s.asr_features;
  if (with_label) b.label = s.label();
  return b;
}

inline std::vector<FeatureBundle> encode_all(
    const RejectionVocab& vocab, const std::vector<HypothesisSample>& samples) {
  std::vector<FeatureBundle> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encode(vocab, s));
  return out;
}

struct RejectionHyperparams {
  int word_dim = 32;
  int hyp_dim = 32;
  std::vector<int> widths{1, 2, 3};
  int channels = 16;
  double learning_rate = 0.05;
  int epochs = 10;
  int batch_size = 32;
  bool class_weighting = true;
  double threshold = 0.5;
  double init_scale = 0.1;
  std::uint64_t seed = 1;
  FeatureFlags features;

  void validate() const {
    if (word_dim < 1 || hyp_dim < 1) throw ValidationError("rejection: dims must be >= 1");
    if (widths.empty()) throw ValidationError("rejection.widths: empty");
    for (int w : widths) {
      if (w < 1) throw ValidationError("rejection.widths: must be >= 1");
    }
    if (channels < 1) throw ValidationError("rejection.channels: must be >= 1");
    if (!(learning_rate > 0)) throw ValidationError("rejection.learning_rate: must be > 0");
    if (epochs < 1) throw ValidationError("rejection.epochs: must be >= 1");
    if (batch_size < 1) throw ValidationError("rejection.batch_size: must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
      throw ValidationError("rejection.threshold: must lie in [0,1]");
    }
    features.validate();
  }
};

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Every trainable tensor of the rejection model.
struct RejectionParams {
  Matrix word_emb;                 // |V_w| x d_w
  Matrix hyp_emb;                  // |V_h| x d_h
  std::vector<Matrix> filters;     // per width: (w * D) x channels
  std::vector<Matrix> conv_bias;   // per width: 1 x channels
  Matrix dense_w;                  // P x 2
  Matrix dense_b;                  // 1 x 2

  template <typename F>
  void visit(F&& f) {
    f("word_emb", word_emb);
    f("hyp_emb", hyp_emb);
    for (std::size_t k = 0; k < filters.size(); ++k) {
      f("filter" + std::to_string(k), filters[k]);
      f("conv_bias" + std::to_string(k), conv_bias[k]);
    }
    f("dense_w", dense_w);
    f("dense_b", dense_b);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<RejectionParams*>(this)->visit(
        [&](const std::string& n, Matrix& m) { f(n, static_cast<const Matrix&>(m)); });
  }

  RejectionParams zeros_like() const {
    RejectionParams z = *this;
    z.visit([](const std::string&, Matrix& m) {
      std::fill(m.data.begin(), m.data.end(), 0.0);
    });
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Matrix& m) {
      for (double v : m.data) ok = ok && std::isfinite(v);
    });
    return ok;
  }

  friend bool operator==(const RejectionParams&, const RejectionParams&) = default;
};

/// Per-feature standardization of the ASR vector, fitted on training data.
/// The raw values (ln frames is around 5) would otherwise saturate tanh.
struct AsrScaler {
  AsrVector mean{};
  AsrVector scale{1.0, 1.0, 1.0, 1.0, 1.0};

  AsrVector apply(const AsrVector& v) const {
    AsrVector out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean[i]) * scale[i];
    return out;
  }
  friend bool operator==(const AsrScaler&, const AsrScaler&) = default;
};

struct RejectionModel {
  RejectionHyperparams hyper;
  RejectionVocab vocab;
  RejectionParams params;
  AsrScaler asr_scaler;
  /// Domain this module guards (single-domain scope), empty for system level.
  std::string domain;

  /// Width of one sequence position.
  std::size_t position_dim() const {
    return (hyper.features.utterance ? hyper.word_dim : 0) +
           (hyper.features.hypothesis ? hyper.hyp_dim : 0) + 1 +
           (hyper.features.asr ? kAsrFeatureCount : 0);
  }
  /// Width of the dense layer input.
  std::size_t dense_input_dim() const {
    return hyper.widths.size() * hyper.channels + 1 +
           (hyper.features.asr ? kAsrFeatureCount : 0);
  }
};

namespace detail {

inline void glorot(Matrix& m, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : m.data) v = rng.uniform(-a, a);
}

}  // namespace detail

/// Fresh model with random parameters. PAD and OOV word rows start at zero.
inline RejectionModel make_model(const RejectionHyperparams& hp,
                                 RejectionVocab vocab,
                                 std::string domain = {}) {
  hp.validate();
  RejectionModel m;
  m.hyper = hp;
  m.vocab = std::move(vocab);
  m.domain = std::move(domain);
  Rng rng(derive_seed(hp.seed, 0xC0FFEE));
  auto& p = m.params;
  p.word_emb = Matrix(m.vocab.word_count(), hp.word_dim);
  for (auto& v : p.word_emb.data) v = rng.uniform(-hp.init_scale, hp.init_scale);
  std::fill_n(p.word_emb.row(RejectionVocab::kPad), 2 * hp.word_dim, 0.0);
  p.hyp_emb = Matrix(m.vocab.label_count(), hp.hyp_dim);
  for (auto& v : p.hyp_emb.data) v = rng.uniform(-hp.init_scale, hp.init_scale);
  std::fill_n(p.hyp_emb.row(RejectionVocab::kPad), hp.hyp_dim, 0.0);
  const std::size_t D = m.position_dim();
  for (int w : hp.widths) {
    Matrix f(w * D, hp.channels);
    detail::glorot(f, w * D, hp.channels, rng);
    p.filters.push_back(std::move(f));
    p.conv_bias.emplace_back(1, hp.channels);
  }
  p.dense_w = Matrix(m.dense_input_dim(), 2);
  detail::glorot(p.dense_w, m.dense_input_dim(), 2, rng);
  p.dense_b = Matrix(1, 2);
  return m;
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardTrace {
  enum class Kind { Word, Label, Bare, Pad };
  struct Position {
    Kind kind;
    int id;
  };
  std::vector<Position> positions;  // includes trailing pads
  std::size_t length = 0;           // positions before padding
  Matrix x;                         // positions x D
  std::vector<Matrix> act;          // per width: windows x channels, tanh
  std::vector<std::vector<std::size_t>> argmax;  // per width, per channel
  std::vector<double> dense_in;
  std::array<double, 2> prob{};     // [reject, accept]
};

namespace detail {

inline void check_ids(const RejectionModel& m, const FeatureBundle& x) {
  const auto& f = m.hyper.features;
  if (f.utterance) {
    if (x.word_ids.empty()) throw ValidationError("forward: no word ids");
    for (int id : x.word_ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= m.vocab.word_count()) {
        throw ValidationError("forward: word id " + std::to_string(id) +
                              " out of range");
      }
    }
  }
  if (f.hypothesis) {
    auto check = [&](int id) {
      if (id < 2 || static_cast<std::size_t>(id) >= m.vocab.label_count()) {
        throw ValidationError("forward: hypothesis id " + std::to_string(id) +
                              " out of range");
      }
    };
    check(x.hyp_ids.domain);
    check(x.hyp_ids.intent);
    for (int id : x.hyp_ids.slots) check(id);
  }
  if (f.asr && !x.asr_features) {
    throw ValidationError("forward: model expects ASR features");
  }
}

}  // namespace detail

/// Embeds, convolves, max-pools over time and applies the dense softmax head.
inline void forward(const RejectionModel& m, const FeatureBundle& x,
                    ForwardTrace& tr) {
  detail::check_ids(m, x);
  const auto& hp = m.hyper;
  const auto& f = hp.features;
  const auto& p = m.params;
  using Kind = ForwardTrace::Kind;

  tr.positions.clear();
  if (f.utterance) {
    for (int id : x.word_ids) tr.positions.push_back({Kind::Word, id});
  }
  if (f.hypothesis) {
    tr.positions.push_back({Kind::Label, RejectionVocab::kSep});
    tr.positions.push_back({Kind::Label, x.hyp_ids.domain});
    tr.positions.push_back({Kind::Label, x.hyp_ids.intent});
    for (int id : x.hyp_ids.slots) tr.positions.push_back({Kind::Label, id});
  }
  if (tr.positions.empty()) tr.positions.push_back({Kind::Bare, 0});
  tr.length = tr.positions.size();
  const std::size_t max_w =
      static_cast<std::size_t>(*std::max_element(hp.widths.begin(), hp.widths.end()));
  while (tr.positions.size() < max_w) tr.positions.push_back({Kind::Pad, 0});

  const std::size_t D = m.position_dim();
  const std::size_t word_off = 0;
  const std::size_t hyp_off = f.utterance ? hp.word_dim : 0;
  const std::size_t score_col = hyp_off + (f.hypothesis ? hp.hyp_dim : 0);
  AsrVector asr{};
  if (f.asr) asr = m.asr_scaler.apply(*x.asr_features);
  tr.x = Matrix(tr.positions.size(), D);
  for (std::size_t t = 0; t < tr.positions.size(); ++t) {
    const auto& pos = tr.positions[t];
    if (pos.kind == Kind::Pad) continue;
    double* row = tr.x.row(t);
    if (pos.kind == Kind::Word) {
      std::copy_n(p.word_emb.row(pos.id), hp.word_dim, row + word_off);
    } else if (pos.kind == Kind::Label) {
      std::copy_n(p.hyp_emb.row(pos.id), hp.hyp_dim, row + hyp_off);
    }
    row[score_col] = x.slu_score;
    if (f.asr) std::copy_n(asr.begin(), kAsrFeatureCount, row + score_col + 1);
  }

  const std::size_t C = hp.channels;
  tr.act.resize(hp.widths.size());
  tr.argmax.resize(hp.widths.size());
  tr.dense_in.assign(m.dense_input_dim(), 0.0);
  for (std::size_t k = 0; k < hp.widths.size(); ++k) {
    const std::size_t w = hp.widths[k];
    const std::size_t n_win = std::max(tr.length, w) - w + 1;
    const Matrix& filt = p.filters[k];
    Matrix& act = tr.act[k];
    act = Matrix(n_win, C);
    for (std::size_t t = 0; t < n_win; ++t) {
      double* z = act.row(t);
      std::copy_n(p.conv_bias[k].row(0), C, z);
      const double* in = tr.x.row(t);
      for (std::size_t j = 0; j < w * D; ++j) {
        const double v = in[j];
        if (v == 0.0) continue;
        const double* fr = filt.row(j);
        for (std::size_t c = 0; c < C; ++c) z[c] += v * fr[c];
      }
      for (std::size_t c = 0; c < C; ++c) z[c] = std::tanh(z[c]);
    }
    auto& am = tr.argmax[k];
    am.assign(C, 0);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 1; t < n_win; ++t) {
        if (act(t, c) > act(am[c], c)) am[c] = t;
      }
      tr.dense_in[k * C + c] = act(am[c], c);
    }
  }
  const std::size_t tail = hp.widths.size() * C;
  tr.dense_in[tail] = x.slu_score;
  if (f.asr) std::copy_n(asr.begin(), kAsrFeatureCount, tr.dense_in.begin() + tail + 1);

  std::array<double, 2> z{p.dense_b(0, 0), p.dense_b(0, 1)};
  for (std::size_t i = 0; i < tr.dense_in.size(); ++i) {
    z[0] += tr.dense_in[i] * p.dense_w(i, 0);
    z[1] += tr.dense_in[i] * p.dense_w(i, 1);
  }
  const double mx = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - mx), e1 = std::exp(z[1] - mx);
  tr.prob = {e0 / (e0 + e1), e1 / (e0 + e1)};
}

/// Probability of Accept.
inline double forward(const RejectionModel& m, const FeatureBundle& x) {
  ForwardTrace tr;
  forward(m, x, tr);
  return tr.prob[1];
}

inline std::array<double, 2> forward_distribution(const RejectionModel& m,
                                                  const FeatureBundle& x) {
  ForwardTrace tr;
  forward(m, x, tr);
  return tr.prob;
}

/// Pooled CNN representation (without the appended score/ASR scalars).
inline std::vector<double> pooled_representation(const RejectionModel& m,
                                                 const FeatureBundle& x) {
  ForwardTrace tr;
  forward(m, x, tr);
  return {tr.dense_in.begin(),
          tr.dense_in.begin() + m.hyper.widths.size() * m.hyper.channels};
}

/// Adds weight * d(-log p[label])/d(params) into grad. Returns the weighted
/// loss of the example.
inline double backward(const RejectionModel& m, const ForwardTrace& tr,
                       Decision label, double weight, RejectionParams& grad) {
  const auto& hp = m.hyper;
  const auto& f = hp.features;
  const auto& p = m.params;
  const std::size_t y = label == Decision::Accept ? 1 : 0;
  const double loss = -weight * std::log(std::max(tr.prob[y], 1e-300));

  std::array<double, 2> gz{weight * tr.prob[0], weight * tr.prob[1]};
  gz[y] -= weight;
  for (std::size_t i = 0; i < tr.dense_in.size(); ++i) {
    grad.dense_w(i, 0) += gz[0] * tr.dense_in[i];
    grad.dense_w(i, 1) += gz[1] * tr.dense_in[i];
  }
  grad.dense_b(0, 0) += gz[0];
  grad.dense_b(0, 1) += gz[1];

  const std::size_t D = m.position_dim();
  const std::size_t C = hp.channels;
  Matrix dx(tr.x.rows, D);
  for (std::size_t k = 0; k < hp.widths.size(); ++k) {
    const std::size_t w = hp.widths[k];
    const Matrix& filt = p.filters[k];
    Matrix& gf = grad.filters[k];
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = k * C + c;
      const double dpool = gz[0] * p.dense_w(i, 0) + gz[1] * p.dense_w(i, 1);
      const std::size_t t = tr.argmax[k][c];
      const double h = tr.act[k](t, c);
      const double dz = dpool * (1.0 - h * h);
      if (dz == 0.0) continue;
      grad.conv_bias[k](0, c) += dz;
      const double* in = tr.x.row(t);
      double* din = dx.row(t);
      for (std::size_t j = 0; j < w * D; ++j) {
        gf(j, c) += dz * in[j];
        din[j] += dz * filt(j, c);
      }
    }
  }

  using Kind = ForwardTrace::Kind;
  const std::size_t hyp_off = f.utterance ? hp.word_dim : 0;
  for (std::size_t t = 0; t < tr.length; ++t) {
    const auto& pos = tr.positions[t];
    const double* d = dx.row(t);
    if (pos.kind == Kind::Word) {
      double* g = grad.word_emb.row(pos.id);
      for (int j = 0; j < hp.word_dim; ++j) g[j] += d[j];
    } else if (pos.kind == Kind::Label) {
      double* g = grad.hyp_emb.row(pos.id);
      for (int j = 0; j < hp.hyp_dim; ++j) g[j] += d[hyp_off + j];
    }
  }
  return loss;
}

/// Inverse-frequency weights {reject, accept}: N / (2 N_c).
inline std::array<double, 2> class_weights(std::span<const FeatureBundle> data) {
  std::array<double, 2> count{0, 0};
  for (const auto& b : data) {
    if (!b.label) throw ValidationError("training data: unlabeled example");
    count[*b.label == Decision::Accept ? 1 : 0] += 1;
  }
  if (count[0] == 0 || count[1] == 0) {
    throw ValidationError(
        "training data contains a single class; class weights undefined");
  }
  const double n = count[0] + count[1];
  return {n / (2 * count[0]), n / (2 * count[1])};
}

/// Mean weighted cross-entropy and its gradient over a set of examples.
inline double loss_and_gradient(const RejectionModel& m,
                                std::span<const FeatureBundle> data,
                                const std::array<double, 2>& weights,
                                RejectionParams* grad) {
  RejectionParams local;
  if (grad) *grad = m.params.zeros_like();
  else local = m.params.zeros_like();
  RejectionParams& g = grad ? *grad : local;
  ForwardTrace tr;
  double total = 0.0;
  for (const auto& x : data) {
    forward(m, x, tr);
    const Decision y = x.label.value_or(Decision::Accept);
    total += backward(m, tr, y, weights[y == Decision::Accept ? 1 : 0], g);
  }
  const double inv = data.empty() ? 0.0 : 1.0 / static_cast<double>(data.size());
  g.visit([&](const std::string&, Matrix& mtx) {
    for (auto& v : mtx.data) v *= inv;
  });
  return total * inv;
}

inline double mean_loss(const RejectionModel& m, std::span<const FeatureBundle> data,
                        const std::array<double, 2>& weights = {1.0, 1.0}) {
  double total = 0.0;
  ForwardTrace tr;
  for (const auto& x : data) {
    forward(m, x, tr);
    const Decision y = x.label.value_or(Decision::Accept);
    const std::size_t yi = y == Decision::Accept ? 1 : 0;
    total += -weights[yi] * std::log(std::max(tr.prob[yi], 1e-300));
  }
  return data.empty() ? 0.0 : total / static_cast<double>(data.size());
}

struct DecisionRecord {
  std::string utterance_id;
  std::optional<SluHypothesis> hypothesis;
  double accept_prob = 0.0;
  Decision decision = Decision::Reject;
  bool hypothesis_correct = false;
};

/// Accept iff the Accept probability reaches the threshold.
inline Decision threshold_decision(double accept_prob, double threshold) {
  return accept_prob >= threshold ? Decision::Accept : Decision::Reject;
}

inline DecisionRecord decide(const RejectionModel& m, const FeatureBundle& x,
                             double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ValidationError("threshold must lie in [0,1]");
  }
  DecisionRecord r;
  r.accept_prob = forward(m, x);
  r.decision = threshold_decision(r.accept_prob, threshold);
  return r;
}

/// Conventional per-example error rates (percent of the set) at threshold.
struct BundleErrorRates {
  double far = 0.0;
  double frr = 0.0;
  std::optional<double> f1;
};

inline BundleErrorRates bundle_error_rates(const RejectionModel& m,
                                           std::span<const FeatureBundle> data,
                                           double threshold) {
  BundleErrorRates r;
  if (data.empty()) return r;
  std::size_t fa = 0, fr = 0;
  for (const auto& x : data) {
    const bool accept = forward(m, x) >= threshold;
    const bool correct = x.label == Decision::Accept;
    fa += accept && !correct;
    fr += !accept && correct;
  }
  const double n = static_cast<double>(data.size());
  r.far = 100.0 * fa / n;
  r.frr = 100.0 * fr / n;
  r.f1 = f1_error(r.far, r.frr);
  return r;
}

struct EpochReport {
  int epoch = 0;
  double train_loss = 0.0;
  BundleErrorRates dev;
  bool selected = false;
};

/// Checkpoint selection key: F1-error, or the larger rate when one of the two
/// is zero (a degenerate accept-all or reject-all model must not look perfect).
inline double selection_key(const BundleErrorRates& r) {
  return r.f1 ? *r.f1 : std::max(r.far, r.frr);
}

/// Mean and inverse standard deviation of each ASR feature over the bundles.
inline AsrScaler fit_asr_scaler(std::span<const FeatureBundle> data) {
  AsrScaler sc;
  AsrVector sum{}, sq{};
  std::size_t n = 0;
  for (const auto& x : data) {
    if (!x.asr_features) continue;
    ++n;
    for (std::size_t i = 0; i < kAsrFeatureCount; ++i) {
      sum[i] += (*x.asr_features)[i];
      sq[i] += (*x.asr_features)[i] * (*x.asr_features)[i];
    }
  }
  if (n == 0) return sc;
  for (std::size_t i = 0; i < kAsrFeatureCount; ++i) {
    sc.mean[i] = sum[i] / static_cast<double>(n);
    const double var = std::max(0.0, sq[i] / static_cast<double>(n) - sc.mean[i] * sc.mean[i]);
    sc.scale[i] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
  return sc;
}

/// Mini-batch gradient descent on class-weighted cross-entropy; keeps the
/// epoch with the lowest dev F1-error at threshold 0.5.
inline RejectionModel train(RejectionModel model,
                            std::span<const FeatureBundle> data,
                            std::span<const FeatureBundle> dev,
                            const std::function<void(const EpochReport&)>& on_epoch = {}) {
  if (data.empty()) throw ValidationError("train: no training data");
  const auto& hp = model.hyper;
  std::array<double, 2> weights = class_weights(data);
  if (!hp.class_weighting) weights = {1.0, 1.0};
  if (hp.features.asr) model.asr_scaler = fit_asr_scaler(data);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(hp.seed, 0xBA7C4));
  RejectionParams grad = model.params.zeros_like();
  RejectionParams best = model.params;
  double best_key = std::numeric_limits<double>::infinity();
  ForwardTrace tr;

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::size_t end = std::min(order.size(), start + hp.batch_size);
      grad.visit([](const std::string&, Matrix& m) {
        std::fill(m.data.begin(), m.data.end(), 0.0);
      });
      for (std::size_t i = start; i < end; ++i) {
        const auto& x = data[order[i]];
        forward(model, x, tr);
        const std::size_t yi = *x.label == Decision::Accept ? 1 : 0;
        epoch_loss += backward(model, tr, *x.label, weights[yi], grad);
      }
      const double step = hp.learning_rate / static_cast<double>(end - start);
      RejectionParams& p = model.params;
      std::size_t which = 0;
      std::vector<Matrix*> targets;
      p.visit([&](const std::string&, Matrix& m) { targets.push_back(&m); });
      grad.visit([&](const std::string&, Matrix& g) {
        Matrix& t = *targets[which++];
        for (std::size_t j = 0; j < g.data.size(); ++j) t.data[j] -= step * g.data[j];
      });
      // PAD rows are fixed zero vectors.
      std::fill_n(p.word_emb.row(RejectionVocab::kPad), hp.word_dim, 0.0);
      std::fill_n(p.hyp_emb.row(RejectionVocab::kPad), hp.hyp_dim, 0.0);
    }
    if (!model.params.all_finite()) {
      throw Error("train: non-finite parameters at epoch " + std::to_string(epoch));
    }
    EpochReport rep;
    rep.epoch = epoch;
    rep.train_loss = epoch_loss / static_cast<double>(data.size());
    const auto& sel = dev.empty() ? data : dev;
    rep.dev = bundle_error_rates(model, sel, 0.5);
    const double key = selection_key(rep.dev);
    if (key < best_key) {
      best_key = key;
      best = model.params;
      rep.selected = true;
    }
    if (on_epoch) on_epoch(rep);
  }
  model.params = std::move(best);
  return model;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
/// whose true gradient is (near) zero from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Analytic gradient of the unweighted loss of x against central differences
/// over every parameter entry.
inline GradientCheckResult gradient_check(const RejectionModel& model,
                                          const FeatureBundle& x,
                                          double step = 1e-4) {
  const std::array<FeatureBundle, 1> one{x};
  RejectionParams analytic;
  loss_and_gradient(model, one, {1.0, 1.0}, &analytic);

  RejectionModel probe = model;
  GradientCheckResult res;
  std::vector<const Matrix*> grads;
  analytic.visit([&](const std::string&, const Matrix& g) { grads.push_back(&g); });
  std::size_t which = 0;
  probe.params.visit([&](const std::string& name, Matrix& m) {
    const Matrix& g = *grads[which++];
    for (std::size_t i = 0; i < m.data.size(); ++i) {
      const double orig = m.data[i];
      m.data[i] = orig + step;
      const double up = mean_loss(probe, one);
      m.data[i] = orig - step;
      const double down = mean_loss(probe, one);
      m.data[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(g.data[i], numeric);
      ++res.checked;
      if (err > res.max_relative_error) {
        res.max_relative_error = err;
        res.worst_tensor = name;
        res.worst_index = i;
      }
    }
  });
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const FeatureFlags& f) {
  return {{"utterance", f.utterance}, {"hypothesis", f.hypothesis}, {"asr", f.asr}};
}

inline FeatureFlags flags_from_json(const nlohmann::json& j) {
  FeatureFlags f;
  f.utterance = j.at("utterance").get<bool>();
  f.hypothesis = j.at("hypothesis").get<bool>();
  f.asr = j.at("asr").get<bool>();
  f.validate();
  return f;
}

inline nlohmann::json to_json(const RejectionHyperparams& h) {
  return {{"word_dim", h.word_dim},
          {"hyp_dim", h.hyp_dim},
          {"widths", h.widths},
          {"channels", h.channels},
          {"learning_rate", h.learning_rate},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"class_weighting", h.class_weighting},
          {"threshold", h.threshold},
          {"init_scale", h.init_scale},
          {"seed", h.seed},
          {"features", to_json(h.features)}};
}

/// Missing keys fall back to defaults so configs can be partial.
inline RejectionHyperparams hyperparams_from_json(const nlohmann::json& j,
                                                  RejectionHyperparams h = {}) {
  h.word_dim = j.value("word_dim", h.word_dim);
  h.hyp_dim = j.value("hyp_dim", h.hyp_dim);
  h.widths = j.value("widths", h.widths);
  h.channels = j.value("channels", h.channels);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.class_weighting = j.value("class_weighting", h.class_weighting);
  h.threshold = j.value("threshold", h.threshold);
  h.init_scale = j.value("init_scale", h.init_scale);
  h.seed = j.value("seed", h.seed);
  if (j.contains("features")) h.features = flags_from_json(j.at("features"));
  return h;
}

inline nlohmann::json to_json(const Matrix& m) {
  return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m;
  m.rows = j.at("rows").get<std::size_t>();
  m.cols = j.at("cols").get<std::size_t>();
  m.data = j.at("data").get<std::vector<double>>();
  if (m.data.size() != m.rows * m.cols) throw ParseError("checkpoint: tensor size mismatch");
  return m;
}

inline RejectionVocab vocab_from_json(const nlohmann::json& j) {
  RejectionVocab v;
  v.words_ = Vocabulary();
  v.labels_ = Vocabulary();
  for (const auto& t : j.at("words")) v.words_.add(t.get<std::string>());
  for (const auto& t : j.at("labels")) v.labels_.add(t.get<std::string>());
  v.scope_ = j.at("scope").get<std::string>() == "single-domain"
                 ? VocabScope::SingleDomain
                 : VocabScope::AllDomains;
  return v;
}

inline nlohmann::json to_json(const RejectionModel& m) {
  nlohmann::json params = nlohmann::json::object();
  m.params.visit([&](const std::string& name, const Matrix& t) { params[name] = to_json(t); });
  return {{"format", "slurej-rejection-model"},
          {"version", kCheckpointVersion},
          {"domain", m.domain},
          {"hyperparams", to_json(m.hyper)},
          {"vocab",
           {{"scope", m.vocab.scope() == VocabScope::SingleDomain ? "single-domain"
                                                                   : "all-domains"},
            {"words", m.vocab.words().tokens()},
            {"labels", m.vocab.labels().tokens()}}},
          {"asr_scaler", {{"mean", m.asr_scaler.mean}, {"scale", m.asr_scaler.scale}}},
          {"params", params}};
}

inline RejectionModel rejection_model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "slurej-rejection-model") {
      throw ParseError("not a rejection model checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint version");
    }
    RejectionModel m;
    m.domain = j.at("domain").get<std::string>();
    m.hyper = hyperparams_from_json(j.at("hyperparams"));
    m.vocab = vocab_from_json(j.at("vocab"));
    const std::size_t n_widths = m.hyper.widths.size();
    m.params.filters.resize(n_widths);
    m.params.conv_bias.resize(n_widths);
    if (j.contains("asr_scaler")) {
      m.asr_scaler.mean = j.at("asr_scaler").at("mean").get<AsrVector>();
      m.asr_scaler.scale = j.at("asr_scaler").at("scale").get<AsrVector>();
    }
    const auto& pj = j.at("params");
    m.params.visit([&](const std::string& name, Matrix& t) { t = matrix_from_json(pj.at(name)); });
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_rejection_model(const RejectionModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << to_json(m).dump() << '\n';
}

inline RejectionModel load_rejection_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingPrerequisite("cannot open " + path);
  try {
    return rejection_model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace slurej

#endif  // SLUREJ_REJECTION_HPP_
