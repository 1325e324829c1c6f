#ifndef SLUREJ_TYPES_HPP_
#define SLUREJ_TYPES_HPP_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "slurej/common.hpp"

namespace slurej {

inline constexpr const char* kOutsideTag = "O";
inline constexpr const char* kEps = "<eps>";

/// A labeled token span [start, end).
struct SlotSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;

  friend bool operator==(const SlotSpan&, const SlotSpan&) = default;
};

struct Annotation {
  std::string domain;
  std::string intent;
  std::vector<SlotSpan> slots;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

/// One alternative in a confusion-network slot.
struct ConfNetArc {
  std::string token;  // kEps for the empty arc
  double confidence = 1.0;
  double posterior = 1.0;

  friend bool operator==(const ConfNetArc&, const ConfNetArc&) = default;
};

/// What a (synthetic) recognizer reports for one utterance.
struct AsrObservation {
  std::vector<std::string> onebest;
  std::vector<std::vector<ConfNetArc>> confnet;
  int n_frames = 1;
  std::vector<int> arcs_per_frame;

  friend bool operator==(const AsrObservation&,
                         const AsrObservation&) = default;
};

struct Utterance {
  std::string id;
  std::vector<std::string> tokens;
  Annotation annotation;
  std::optional<AsrObservation> asr;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Which token sequence the SLU system sees.
enum class TextSource { Transcript, AsrOneBest };

inline const std::vector<std::string>& decoded_tokens(const Utterance& u,
                                                      TextSource src) {
  if (src == TextSource::AsrOneBest && u.asr && !u.asr->onebest.empty()) {
    return u.asr->onebest;
  }
  return u.tokens;
}

/// Per-token IO labels for an annotation over n tokens.
inline std::vector<std::string> tagging_of(const Annotation& a,
                                           std::size_t n_tokens) {
  std::vector<std::string> tags(n_tokens, kOutsideTag);
  for (const auto& s : a.slots) {
    for (std::size_t i = s.start; i < s.end && i < n_tokens; ++i) {
      tags[i] = s.label;
    }
  }
  return tags;
}

/// Slot (label, value) pairs in order, read off a per-token tagging.
/// Consecutive tokens sharing a label form one slot.
inline std::vector<std::pair<std::string, std::string>> slot_values(
    const std::vector<std::string>& tokens,
    const std::vector<std::string>& tagging) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < tagging.size() && i < tokens.size();) {
    if (tagging[i] == kOutsideTag) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    std::string value = tokens[i];
    while (j < tagging.size() && tagging[j] == tagging[i]) {
      value += ' ';
      value += tokens[j++];
    }
    out.emplace_back(tagging[i], std::move(value));
    i = j;
  }
  return out;
}

}  // namespace slurej

#endif  // SLUREJ_TYPES_HPP_
