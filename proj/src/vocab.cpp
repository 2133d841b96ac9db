#include "live/vocab.hpp"

#include <cctype>

#include "live/catalog.hpp"
#include "live/error.hpp"

namespace live {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary Vocabulary::standard(bool shared_stream_eos) {
  Vocabulary v;
  v.shared_stream_eos_ = shared_stream_eos;
  v.words_ = {"<pad>", "</s>",   "<stream-eos>", "<user>", "<assistant>", "<frame>",
              "<system>", "<s>", "[INST]",       "[/INST]", "<sp>"};
  for (auto& w : catalog_words()) v.words_.push_back(w);
  for (size_t i = 0; i < v.words_.size(); ++i) v.index_.emplace(v.words_[i], static_cast<int>(i));
  return v;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw UnknownTokenError("unknown token '" + std::string(word) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const {
  return index_.count(std::string(word)) != 0;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw UnknownTokenError("token id " + std::to_string(id) + " out of range");
  return words_[static_cast<size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += word(id);
  }
  return out;
}

std::vector<int> Vocabulary::per_frame_silent_turn() const {
  return {token::kAssistant, stream_eos(),     token::kTurnEos,    token::kTplBos, token::kTplInst,
          token::kTplSpace,  token::kTplSpace, token::kTplInstEnd, token::kTplSpace, token::kTplSpace};
}

}  // namespace live
