#include "live/catalog.hpp"

#include <set>

#include "live/vocab.hpp"

namespace live {

std::string ActivityPhrase::narration() const {
  return "you " + present + " " + object + " " + manner;
}

const char* tense_name(Tense tense) {
  switch (tense) {
    case Tense::Past: return "past";
    case Tense::Current: return "current";
    case Tense::Future: return "future";
  }
  return "?";
}

const std::vector<ActivityPhrase>& activity_catalog() {
  static const std::vector<ActivityPhrase> catalog = {
      {"pick up", "picking up", "picked up", "the knife", "with your right hand"},
      {"wash", "washing", "washed", "the tomato", "under the running tap water"},
      {"cut", "cutting", "cut", "the onion", "on the wooden chopping board"},
      {"open", "opening", "opened", "the fridge", "with your left hand"},
      {"pour", "pouring", "poured", "the water", "into the small metal pot"},
      {"stir", "stirring", "stirred", "the soup", "with the long wooden spoon"},
      {"close", "closing", "closed", "the drawer", "with your left hand"},
      {"put down", "putting down", "put down", "the plate", "on the kitchen counter"},
      {"wipe", "wiping", "wiped", "the table", "with a wet cloth"},
      {"turn on", "turning on", "turned on", "the stove", "with your right hand"},
      {"peel", "peeling", "peeled", "the potato", "over the kitchen sink"},
      {"fold", "folding", "folded", "the towel", "on the wooden table"},
      {"fill", "filling", "filled", "the kettle", "at the kitchen sink"},
      {"rinse", "rinsing", "rinsed", "the bowl", "under the running tap water"},
      {"grab", "grabbing", "grabbed", "the pan", "from the top shelf"},
      {"mix", "mixing", "mixed", "the flour", "in the large glass bowl"},
  };
  return catalog;
}

const std::vector<std::string>& task_name_catalog() {
  static const std::vector<std::string> names = {
      "make a salad", "cook the soup",   "clean the kitchen", "prepare tea",
      "bake a cake",  "wash the dishes", "do the laundry",    "make breakfast",
  };
  return names;
}

const std::vector<QueryTemplate>& default_templates() {
  static const std::vector<QueryTemplate> templates = {
      {Tense::Past, "what did i just finish ?", "you just", "you have not finished any step yet"},
      {Tense::Past, "what have i done ?", "you have", "you have not finished any step yet"},
      {Tense::Past, "what did i do earlier ?", "earlier you", "you have not finished any step yet"},
      {Tense::Past, "what happened before this ?", "before this you",
       "you have not finished any step yet"},
      {Tense::Past, "what was my last step ?", "last you", "you have not finished any step yet"},

      {Tense::Current, "what am i doing now ?", "you are", "you are not doing any step now"},
      {Tense::Current, "what is happening now ?", "right now you are",
       "you are not doing any step now"},
      {Tense::Current, "what step is this ?", "this step is", "you are not doing any step now"},
      {Tense::Current, "tell me what i am doing .", "currently you are",
       "you are not doing any step now"},
      {Tense::Current, "what is my current step ?", "at the moment you are",
       "you are not doing any step now"},

      {Tense::Future, "what should i do next ?", "next you will", "you will finish the task"},
      {Tense::Future, "what is the next step ?", "the next step is to", "you will finish the task"},
      {Tense::Future, "what comes after this ?", "after this you will", "you will finish the task"},
      {Tense::Future, "what will i do next ?", "then you will", "you will finish the task"},
      {Tense::Future, "remind me of the next step .", "you should next", "you will finish the task"},
  };
  return templates;
}

std::vector<std::string> catalog_words() {
  std::set<std::string> words;
  auto add = [&](const std::string& text) {
    for (auto& w : split_words(text)) words.insert(w);
  };
  for (const auto& a : activity_catalog()) {
    add(a.narration());
    add(a.gerund);
    add(a.past);
  }
  for (const auto& t : task_name_catalog()) add(t);
  for (const auto& q : default_templates()) {
    add(q.question);
    add(q.response_prefix);
    add(q.fallback);
  }
  add(kSystemPrompt);
  add(kNarrationInstruction);
  return {words.begin(), words.end()};
}

}  // namespace live
