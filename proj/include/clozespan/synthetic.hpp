#pragma once

// Deterministic synthetic corpus and labeled-data generator: templated
// sentences over six value families (times, dates, person names, cities,
// two-word dishes, device codes) plus no-value chatter. Value inventories are
// split so test-set values never occur in the pretraining corpus or the
// fine-tuning sets, and labeled test utterances use sentence templates never
// seen in the labeled training sets. Templates may carry a distractor
// placeholder that is filled with a value of a different family, so locating
// "the rare phrase" is not enough to solve a slot.

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "clozespan/corpus.hpp"
#include "clozespan/labeled_data.hpp"
#include "clozespan/rng.hpp"

namespace clozespan {
namespace synth {

struct SlotSpec {
  std::string slot;
  std::string domain;
  std::string corpus_group;
  // "{}" marks the slot value; "{d}" an optional distractor of another family
  std::vector<std::string> corpus_templates;
  std::vector<std::string> train_utterance_templates;
  std::vector<std::string> test_utterance_templates;
  std::vector<std::string> train_values;
  std::vector<std::string> test_values;
};

namespace detail {

inline std::string make_syllabic(Rng& rng, std::size_t syllables) {
  static const std::vector<std::string> onsets = {
      "b", "d",  "f",  "g",  "h",  "j",  "k",  "l",  "m",  "n",  "p", "r",
      "s", "t",  "v",  "w",  "z",  "br", "dr", "kr", "st", "sh", "th"};
  static const std::vector<std::string> vowels = {"a", "e", "i", "o", "u"};
  static const std::vector<std::string> codas = {"", "n", "l", "r", "s", "k"};
  std::string word;
  for (std::size_t s = 0; s < syllables; ++s) {
    word += onsets[rng.next_below(onsets.size())];
    word += vowels[rng.next_below(vowels.size())];
  }
  word += codas[rng.next_below(codas.size())];
  return word;
}

inline std::vector<std::string> unique_syllabic(Rng rng, std::size_t count,
                                                const std::string& suffix = "") {
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w = make_syllabic(rng, 2 + rng.next_below(2));
    if (!suffix.empty()) w += suffix;
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

inline std::vector<std::string> time_values() {
  std::vector<std::string> out;
  for (int h = 1; h <= 12; ++h) {
    out.push_back(std::to_string(h) + "pm");
    out.push_back(std::to_string(h) + "am");
  }
  for (int h = 1; h <= 12; ++h)
    for (int m = 5; m < 60; m += 5) {
      std::string mm = m < 10 ? "0" + std::to_string(m) : std::to_string(m);
      out.push_back(std::to_string(h) + ":" + mm);
    }
  return out;
}

inline std::vector<std::string> date_values() {
  static const std::vector<std::string> months = {
      "january", "february", "march",     "april",   "may",      "june",
      "july",    "august",   "september", "october", "november", "december"};
  std::vector<std::string> out;
  for (const std::string& m : months)
    for (int d = 1; d <= 28; ++d) out.push_back(m + " " + std::to_string(d));
  return out;
}

inline std::vector<std::string> code_values() {
  std::vector<std::string> out;
  static const std::string letters = "kjqzrv";
  for (char c : letters)
    for (int n = 10; n < 80; ++n) out.push_back(std::string("x") + c + std::to_string(n));
  return out;
}

inline void split_values(std::vector<std::string> values, Rng rng,
                         std::vector<std::string>& train, std::vector<std::string>& test,
                         double test_fraction = 0.3) {
  rng.shuffle(values);
  const std::size_t n_test =
      std::max<std::size_t>(1, static_cast<std::size_t>(test_fraction * values.size()));
  test.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n_test));
  train.assign(values.begin() + static_cast<std::ptrdiff_t>(n_test), values.end());
}

inline std::string fill_placeholder(const std::string& text, const std::string& marker,
                                    const std::string& value, CharSpan* span = nullptr) {
  const std::size_t pos = text.find(marker);
  if (pos == std::string::npos) {
    if (span) *span = CharSpan{0, 0};
    return text;
  }
  std::string out = text.substr(0, pos) + value + text.substr(pos + marker.size());
  if (span) *span = CharSpan{pos, pos + value.size()};
  return out;
}

// Fills "{d}" first (so "{}" offsets are final), then the value slot.
inline std::string instantiate(const std::string& tmpl, const std::string& value,
                               const std::string& distractor, CharSpan* span) {
  const std::string with_d = fill_placeholder(tmpl, "{d}", distractor);
  return fill_placeholder(with_d, "{}", value, span);
}

}  // namespace detail

inline std::vector<SlotSpec> default_slot_specs(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SlotSpec> specs;

  {
    SlotSpec s;
    s.slot = "time";
    s.domain = "booking";
    s.corpus_group = "booking";
    s.corpus_templates = {
        "can you book a table for {} please",
        "i will be there at {} tomorrow",
        "lets meet around {} if that works",
        "my reservation is at {} tonight",
        "the shop closes at {} today",
        "see you at {} then",
        "tell {d} we are coming at {}",
        "the {} slot near {d} is already taken"};
    s.train_utterance_templates = {
        "book a table for {} please",
        "we will arrive by {} i think",
        "could you move it to {} instead",
        "they told me {} works for the table",
        "make the booking for {} tonight",
        "ask {d} if {} suits everyone",
        "{} would be perfect for us",
        "the kitchen is only free at {}",
        "put us in at {} if possible",
        "i called {d} about the {} table",
        "anything after {} works fine",
        "we settled on {} in the end"};
    s.test_utterance_templates = {
        "is {} still available tonight",
        "the earliest we can do is {}",
        "{d} suggested {} for the dinner",
        "please confirm the {} reservation",
        "we may be late for the {} slot",
        "change it from noonish to {}"};
    detail::split_values(detail::time_values(), rng.substream("time"), s.train_values,
                         s.test_values);
    specs.push_back(std::move(s));
  }
  {
    SlotSpec s;
    s.slot = "date";
    s.domain = "booking";
    s.corpus_group = "booking";
    s.corpus_templates = {
        "can we come on {} instead",
        "i booked us in for {}",
        "they are fully booked on {}",
        "lets plan the dinner for {}",
        "the offer runs until {} only",
        "we moved the party to {}",
        "{d} wants to visit on {}",
        "the {} slot was taken by {d}"};
    s.train_utterance_templates = {
        "we would like to come on {}",
        "change the booking to {} please",
        "is there a free table on {}",
        "put us down for {} then",
        "the dinner should be on {}",
        "{d} said {} works for everyone",
        "somewhere around {} would suit us",
        "keep the evening of {} open",
        "we finally agreed on {}",
        "i penciled us in for {}",
        "ask {d} whether {} still works",
        "our anniversary lands on {}"};
    s.test_utterance_templates = {
        "does {} have any openings left",
        "move everything to {} instead",
        "{d} prefers {} for the party",
        "the invite now says {}",
        "we rescheduled the tasting to {}",
        "block out {} for the visit"};
    detail::split_values(detail::date_values(), rng.substream("date"), s.train_values,
                         s.test_values);
    specs.push_back(std::move(s));
  }
  {
    SlotSpec s;
    s.slot = "name";
    s.domain = "contacts";
    s.corpus_group = "intro";
    s.corpus_templates = {
        "my name is {} by the way",
        "please ask for {} at the desk",
        "this is {} from the office",
        "{} will join us later today",
        "i spoke with {} yesterday",
        "say hello to {} for me",
        "{} moved to {d} last month",
        "meet {} near the {d} branch"};
    s.train_utterance_templates = {
        "the booking is under {} thanks",
        "put it under the name {} please",
        "ask for {} when you arrive",
        "{} made the reservation",
        "my colleague {} is coming too",
        "{} is driving in from {d}",
        "leave a message for {} please",
        "the card belongs to {}",
        "{} called about the order",
        "our host tonight is {}",
        "tell {} the plan changed",
        "{} left a deposit already"};
    s.test_utterance_templates = {
        "the table should say {} on it",
        "has {} checked in yet",
        "{} flew in from {d} this morning",
        "please page {} at the entrance",
        "the second guest is {}",
        "add {} to the list"};
    s.train_values = detail::unique_syllabic(rng.substream("name-train"), 220);
    s.test_values = detail::unique_syllabic(rng.substream("name-test"), 80);
    specs.push_back(std::move(s));
  }
  {
    SlotSpec s;
    s.slot = "city";
    s.domain = "contacts";
    s.corpus_group = "travel";
    s.corpus_templates = {
        "we are driving to {} next week",
        "the train to {} was late again",
        "i just moved from {} last year",
        "is {} worth visiting in summer",
        "my cousin lives in {} now",
        "flights to {} are cheap today",
        "{d} flew to {} for the weekend",
        "the {} office called {d} twice"};
    s.train_utterance_templates = {
        "i am calling from {} right now",
        "the office in {} is closed",
        "we relocated to {} recently",
        "send the package to {} please",
        "our branch in {} can help",
        "{d} commutes from {} daily",
        "the venue is somewhere in {}",
        "traffic out of {} was terrible",
        "they opened a store in {}",
        "the conference moved to {}",
        "ask {d} about hotels in {}",
        "we toured {} last spring"};
    s.test_utterance_templates = {
        "is the {} depot still open",
        "route the delivery through {}",
        "{d} just landed in {}",
        "their headquarters sit in {}",
        "the {} team joins remotely",
        "book the crew a night in {}"};
    s.train_values = detail::unique_syllabic(rng.substream("city-train"), 150, "ton");
    s.test_values = detail::unique_syllabic(rng.substream("city-test"), 60, "ton");
    specs.push_back(std::move(s));
  }
  {
    SlotSpec s;
    s.slot = "dish";
    s.domain = "food";
    s.corpus_group = "food";
    s.corpus_templates = {
        "i could eat {} every single day",
        "the {} here is really good",
        "grandma made {} for dinner",
        "never order the {} at this place",
        "their {} won a prize last year",
        "one bowl of {} costs a fortune",
        "{d} keeps praising the {} here",
        "we shared {} with {d} downtown"};
    s.train_utterance_templates = {
        "we would like the {} to share",
        "is the {} still on the menu",
        "two orders of {} please",
        "the chef recommends the {}",
        "can we get {} without onions",
        "{d} always orders the {}",
        "my {} arrived cold yesterday",
        "save us a portion of {}",
        "how spicy is the {} today",
        "the {} pairs well with bread",
        "{d} told us to try the {}",
        "one {} and two spoons please"};
    s.test_utterance_templates = {
        "does the kitchen still make {}",
        "a half order of {} is plenty",
        "{d} says the {} tastes amazing",
        "their famous {} sold out early",
        "we drove far for this {}",
        "the special tonight is {}"};
    std::vector<std::string> firsts =
        detail::unique_syllabic(rng.substream("dish-train"), 120);
    std::vector<std::string> test_firsts =
        detail::unique_syllabic(rng.substream("dish-test"), 50);
    static const std::vector<std::string> kinds = {"stew", "soup", "pie", "curry",
                                                   "salad"};
    Rng kind_rng = rng.substream("dish-kind");
    for (const std::string& f : firsts)
      s.train_values.push_back(f + " " + kinds[kind_rng.next_below(kinds.size())]);
    for (const std::string& f : test_firsts)
      s.test_values.push_back(f + " " + kinds[kind_rng.next_below(kinds.size())]);
    specs.push_back(std::move(s));
  }
  {
    SlotSpec s;
    s.slot = "device";
    s.domain = "gear";
    s.corpus_group = "gear";
    s.corpus_templates = {
        "my old {} finally died today",
        "the {} has a cracked screen",
        "just upgraded to the {} model",
        "is the {} still under warranty",
        "the {} keeps rebooting at night",
        "found a cheap {} online yesterday",
        "{d} wants to borrow my {}",
        "sold the {} to {d} last week"};
    s.train_utterance_templates = {
        "my {} needs a repair",
        "the {} will not turn on",
        "i want to return the {}",
        "does the {} support fast charging",
        "the screen of my {} is broken",
        "{d} spilled coffee on the {}",
        "my {} fell in the sink",
        "the {} battery drains overnight",
        "update bricked the {} again",
        "we ordered a {} for the office",
        "ask {d} to reset the {}",
        "the {} hums when charging"};
    s.test_utterance_templates = {
        "the {} refuses to pair",
        "is the {} covered by insurance",
        "{d} returned the {} already",
        "our spare {} is missing",
        "the {} shipped without a cable",
        "trade in the {} for credit"};
    detail::split_values(detail::code_values(), rng.substream("device"), s.train_values,
                         s.test_values);
    specs.push_back(std::move(s));
  }
  return specs;
}

inline std::vector<std::string> chatter_sentences() {
  return {
      "that is a really good point",      "i totally agree with you there",
      "thanks for sharing this with us",  "not sure what to think about that",
      "this made me laugh so hard",       "could not have said it better",
      "what a day it has been",           "hope everyone is doing well",
      "that sounds about right to me",    "let me know how it goes",
      "i was wondering the same thing",   "glad it worked out in the end",
      "nobody saw that one coming",       "same thing happened to me once",
      "you should get some rest",         "the weather was awful all week"};
}

struct SyntheticConfig {
  std::size_t corpus_sentences = 5000;
  double chatter_fraction = 0.22;
  double corpus_distractor_rate = 0.12;  // share of value sentences with a distractor
  std::size_t train_positives_per_slot = 192;
  std::size_t train_negatives_per_slot = 384;
  std::size_t test_positives_per_slot = 64;
  std::size_t test_negatives_per_slot = 64;
  std::uint64_t seed = 11;
};

struct SyntheticData {
  std::vector<RawComment> corpus;
  std::map<std::string, std::vector<LabeledExample>> train_by_domain;
  std::map<std::string, std::vector<LabeledExample>> test_by_domain;

  std::vector<LabeledExample> train_for_slot(const std::string& slot) const {
    return filter_slot(train_by_domain, slot);
  }
  std::vector<LabeledExample> test_for_slot(const std::string& slot) const {
    return filter_slot(test_by_domain, slot);
  }

 private:
  static std::vector<LabeledExample> filter_slot(
      const std::map<std::string, std::vector<LabeledExample>>& by_domain,
      const std::string& slot) {
    std::vector<LabeledExample> out;
    for (const auto& [domain, examples] : by_domain)
      for (const LabeledExample& e : examples)
        if (e.slot == slot) out.push_back(e);
    return out;
  }
};

namespace detail {

inline const std::string& pick(const std::vector<std::string>& pool, Rng& rng) {
  return pool[rng.next_below(pool.size())];
}

inline std::string pick_distractor(const SlotSpec& spec,
                                   const std::vector<SlotSpec>& all_specs,
                                   bool use_test_values, Rng& rng) {
  const SlotSpec* other = &all_specs[rng.next_below(all_specs.size())];
  for (int attempt = 0; attempt < 16 && other->slot == spec.slot; ++attempt)
    other = &all_specs[rng.next_below(all_specs.size())];
  return pick(use_test_values ? other->test_values : other->train_values, rng);
}

}  // namespace detail

// Labeled examples for one slot: positives from the slot's utterance
// templates (train or the held-out test templates), negatives split between
// chatter and other slots' utterances.
inline std::vector<LabeledExample> make_slot_examples(
    const SlotSpec& spec, const std::vector<SlotSpec>& all_specs, bool use_test_values,
    std::size_t num_positives, std::size_t num_negatives, Rng& rng,
    const std::string& id_prefix) {
  const std::vector<std::string>& values =
      use_test_values ? spec.test_values : spec.train_values;
  const std::vector<std::string>& templates =
      use_test_values ? spec.test_utterance_templates : spec.train_utterance_templates;
  std::vector<LabeledExample> out;
  std::size_t index = 0;
  for (std::size_t i = 0; i < num_positives; ++i) {
    const std::string& tmpl = detail::pick(templates, rng);
    LabeledExample e;
    CharSpan span;
    e.text = detail::instantiate(
        tmpl, detail::pick(values, rng),
        detail::pick_distractor(spec, all_specs, use_test_values, rng), &span);
    e.span = span;
    e.slot = spec.slot;
    e.domain = spec.domain;
    e.source_id = id_prefix + std::to_string(index++);
    out.push_back(std::move(e));
  }
  const std::vector<std::string> chatter = chatter_sentences();
  for (std::size_t i = 0; i < num_negatives; ++i) {
    LabeledExample e;
    if (rng.next_unit() < 0.5) {
      e.text = chatter[rng.next_below(chatter.size())];
    } else {
      // an utterance carrying some other slot's value
      const SlotSpec* other = &all_specs[rng.next_below(all_specs.size())];
      for (int attempt = 0; attempt < 16 && other->slot == spec.slot; ++attempt)
        other = &all_specs[rng.next_below(all_specs.size())];
      const std::vector<std::string>& other_templates =
          use_test_values ? other->test_utterance_templates
                          : other->train_utterance_templates;
      e.text = detail::instantiate(
          detail::pick(other_templates, rng),
          detail::pick(use_test_values ? other->test_values : other->train_values, rng),
          detail::pick_distractor(*other, all_specs, use_test_values, rng), nullptr);
    }
    e.slot = spec.slot;
    e.domain = spec.domain;
    e.source_id = id_prefix + std::to_string(index++);
    out.push_back(std::move(e));
  }
  return out;
}

inline SyntheticData make_synthetic(const SyntheticConfig& config = {}) {
  SyntheticData data;
  const std::vector<SlotSpec> specs = default_slot_specs(config.seed);
  Rng corpus_rng = Rng(config.seed).substream("corpus");

  const std::vector<std::string> chatter = chatter_sentences();
  const std::vector<std::string> groups = {"booking", "intro", "travel", "food", "gear"};
  for (std::size_t i = 0; i < config.corpus_sentences; ++i) {
    RawComment comment;
    if (corpus_rng.next_unit() < config.chatter_fraction) {
      comment.group_key = groups[corpus_rng.next_below(groups.size())];
      comment.text = chatter[corpus_rng.next_below(chatter.size())];
    } else {
      const SlotSpec& spec = specs[corpus_rng.next_below(specs.size())];
      comment.group_key = spec.corpus_group;
      const bool with_distractor =
          corpus_rng.next_unit() < config.corpus_distractor_rate;
      std::vector<std::string> pool;
      for (const std::string& tmpl : spec.corpus_templates)
        if ((tmpl.find("{d}") != std::string::npos) == with_distractor)
          pool.push_back(tmpl);
      comment.text = detail::instantiate(
          detail::pick(pool, corpus_rng),
          detail::pick(spec.train_values, corpus_rng),
          detail::pick_distractor(spec, specs, false, corpus_rng), nullptr);
    }
    data.corpus.push_back(std::move(comment));
  }

  for (const SlotSpec& spec : specs) {
    Rng train_rng = Rng(config.seed).substream("labeled-train/" + spec.slot);
    Rng test_rng = Rng(config.seed).substream("labeled-test/" + spec.slot);
    std::vector<LabeledExample> train = make_slot_examples(
        spec, specs, /*use_test_values=*/false, config.train_positives_per_slot,
        config.train_negatives_per_slot, train_rng, spec.slot + "-train-");
    std::vector<LabeledExample> test = make_slot_examples(
        spec, specs, /*use_test_values=*/true, config.test_positives_per_slot,
        config.test_negatives_per_slot, test_rng, spec.slot + "-test-");
    auto& train_dst = data.train_by_domain[spec.domain];
    train_dst.insert(train_dst.end(), train.begin(), train.end());
    auto& test_dst = data.test_by_domain[spec.domain];
    test_dst.insert(test_dst.end(), test.begin(), test.end());
  }
  return data;
}

}  // namespace synth
}  // namespace clozespan
