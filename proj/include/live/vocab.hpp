#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace live {

/// Fixed ids for the special tokens. Word tokens follow after kFirstWordId.
namespace token {
inline constexpr int kPad = 0;
inline constexpr int kTurnEos = 1;
inline constexpr int kStreamEos = 2;
inline constexpr int kUser = 3;
inline constexpr int kAssistant = 4;
inline constexpr int kFrame = 5;  // placeholder; never embedded, frames go through the projector
inline constexpr int kSystem = 6;
inline constexpr int kTplBos = 7;
inline constexpr int kTplInst = 8;
inline constexpr int kTplInstEnd = 9;
inline constexpr int kTplSpace = 10;
inline constexpr int kFirstWordId = 11;
}  // namespace token

/// Word-level vocabulary over the closed toy grammar.
///
/// The streaming silence token is a dedicated id (kStreamEos) unless the
/// vocabulary is built with shared_stream_eos, in which case silence is
/// predicted with the ordinary turn-ending EOS.
class Vocabulary {
 public:
  /// Specials plus every word the data generator can emit.
  static Vocabulary standard(bool shared_stream_eos = false);

  int size() const { return static_cast<int>(words_.size()); }
  int stream_eos() const { return shared_stream_eos_ ? token::kTurnEos : token::kStreamEos; }
  int turn_eos() const { return token::kTurnEos; }
  bool shared_stream_eos() const { return shared_stream_eos_; }

  int id(std::string_view word) const;  // throws UnknownTokenError
  bool contains(std::string_view word) const;
  const std::string& word(int id) const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  /// Ten template tokens appended after a silent frame by the per-frame
  /// dialogue baseline: role marker, the one-token silent answer, turn EOS,
  /// then the markers that open the next user turn.
  std::vector<int> per_frame_silent_turn() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  bool shared_stream_eos_ = false;
};

/// Split on ASCII whitespace.
std::vector<std::string> split_words(std::string_view text);

}  // namespace live
