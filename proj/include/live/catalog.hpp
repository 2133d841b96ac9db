#pragma once

#include <string>
#include <vector>

namespace live {

/// One activity of the synthetic world, with the phrase forms the
/// narration and dialogue renderers need.
struct ActivityPhrase {
  std::string present;   // "pick up"
  std::string gerund;    // "picking up"
  std::string past;      // "picked up"
  std::string object;    // "the knife"
  std::string manner;    // "with your right hand"

  std::string narration() const;  // "you pick up the knife with your right hand"
};

enum class Tense { Past, Current, Future };

const char* tense_name(Tense tense);

/// Question template. The response prefix/suffix wrap the activity phrase the
/// tense's rule selects; the fallback is used when the rule selects nothing.
struct QueryTemplate {
  Tense tense = Tense::Past;
  std::string question;
  std::string response_prefix;  // e.g. "you just"
  std::string fallback;         // e.g. "you have not finished any step yet"
};

const std::vector<ActivityPhrase>& activity_catalog();
const std::vector<std::string>& task_name_catalog();

/// Desk-scale template library: five per tense.
const std::vector<QueryTemplate>& default_templates();

inline constexpr const char* kSystemPrompt =
    "a video assistant watches the stream and speaks only when needed";
inline constexpr const char* kNarrationInstruction = "please narrate what you do in real time";

/// Every word the generator can emit, for vocabulary construction.
std::vector<std::string> catalog_words();

}  // namespace live
