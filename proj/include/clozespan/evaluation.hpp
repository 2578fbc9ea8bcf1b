#pragma once

// Span-exact-match F1, few-shot subsampling, decoder ensembling, the episodic
// 5-shot harness, and the no-fine-tuning probe. A prediction counts as
// correct only if its character span equals the gold span exactly; partial or
// longer spans are incorrect.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "clozespan/crf.hpp"
#include "clozespan/labeled_data.hpp"
#include "clozespan/model.hpp"
#include "clozespan/training.hpp"

namespace clozespan {

// ---------------------------------------------------------------------------
// metrics

struct Prediction {
  std::string source_id;
  std::string slot;
  std::optional<CharSpan> span;
};

struct SlotMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

struct EvalReport {
  std::map<std::string, SlotMetrics> per_slot;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::size_t invalid_decodes = 0;
};

namespace detail {
inline double f1_of(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double p = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}
}  // namespace detail

inline EvalReport span_f1(const std::vector<Prediction>& predictions,
                          const std::vector<LabeledExample>& gold) {
  std::map<std::pair<std::string, std::string>, const LabeledExample*> gold_by_key;
  for (const LabeledExample& e : gold) gold_by_key[{e.slot, e.source_id}] = &e;

  EvalReport report;
  std::set<std::pair<std::string, std::string>> seen;
  for (const Prediction& p : predictions) {
    auto it = gold_by_key.find({p.slot, p.source_id});
    if (it == gold_by_key.end())
      throw std::invalid_argument("span_f1: prediction for unknown example " + p.slot +
                                  "/" + p.source_id);
    seen.insert(it->first);
    SlotMetrics& m = report.per_slot[p.slot];
    const std::optional<CharSpan>& g = it->second->span;
    if (p.span && g) {
      if (*p.span == *g) {
        ++m.true_positives;
      } else {
        ++m.false_positives;  // partial or longer span: incorrect
        ++m.false_negatives;
      }
    } else if (p.span && !g) {
      ++m.false_positives;
    } else if (!p.span && g) {
      ++m.false_negatives;
    }
  }
  // Gold examples without a prediction count as missed values.
  for (const LabeledExample& e : gold) {
    if (seen.count({e.slot, e.source_id})) continue;
    if (e.span) ++report.per_slot[e.slot].false_negatives;
  }

  std::size_t tp = 0, fp = 0, fn = 0;
  double f1_sum = 0.0;
  for (auto& [slot, m] : report.per_slot) {
    m.precision = m.true_positives + m.false_positives == 0
                      ? 0.0
                      : static_cast<double>(m.true_positives) /
                            static_cast<double>(m.true_positives + m.false_positives);
    m.recall = m.true_positives + m.false_negatives == 0
                   ? 0.0
                   : static_cast<double>(m.true_positives) /
                         static_cast<double>(m.true_positives + m.false_negatives);
    m.f1 = detail::f1_of(m.true_positives, m.false_positives, m.false_negatives);
    f1_sum += m.f1;
    tp += m.true_positives;
    fp += m.false_positives;
    fn += m.false_negatives;
  }
  report.macro_f1 = report.per_slot.empty()
                        ? 0.0
                        : f1_sum / static_cast<double>(report.per_slot.size());
  report.micro_f1 = detail::f1_of(tp, fp, fn);
  return report;
}

// Deterministic uniform subsample of floor(fraction * N) examples (at least
// one); fraction 1 is the identity. Input order is preserved.
inline std::vector<LabeledExample> subsample_training(
    const std::vector<LabeledExample>& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subsample_training: fraction must be in (0, 1]");
  if (fraction == 1.0) return data;
  const std::size_t target = std::max<std::size_t>(
      1, static_cast<std::size_t>(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> indices(data.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  Rng rng = Rng(seed).substream("subsample");
  rng.shuffle(indices);
  indices.resize(target);
  std::sort(indices.begin(), indices.end());
  std::vector<LabeledExample> out;
  out.reserve(target);
  for (std::size_t i : indices) out.push_back(data[i]);
  return out;
}

// ---------------------------------------------------------------------------
// single-decoder prediction

struct SpanPrediction {
  std::optional<CharSpan> span;
  double probability = 0.0;  // exact sequence probability of the prediction
  bool invalid_decode = false;
};

template <typename Real>
SpanPrediction predict_span(const TaggerModel<Real>& model, const Vocabulary& vocab,
                            const std::string& text, bool requested = false,
                            bool use_extra_features = false) {
  NoGradGuard guard;
  const TokenizedText tokens = tokenize(text, vocab);
  ExtraFeatures features = make_extra_features(tokens, requested);
  auto out = model.decode(tokens, tokens, use_extra_features ? &features : nullptr);
  const CrfPotentials raw = crf_potentials_from(out.potentials);
  const std::vector<ScoredSequence> best = viterbi(raw, 1);
  SpanPrediction prediction;
  prediction.probability = std::exp(best[0].log_prob);
  if (!is_valid_tag_sequence(best[0].tags)) {
    prediction.invalid_decode = true;  // mapped to no-span
    return prediction;
  }
  prediction.span = tags_to_span(tokens, best[0].tags);
  return prediction;
}

// ---------------------------------------------------------------------------
// ensembling

struct EnsembleDecision {
  std::optional<std::pair<std::size_t, std::size_t>> token_range;
  double probability = 0.0;  // averaged exact sequence probability
  std::size_t invalid_decodes = 0;
};

// Decision rule over raw potentials: the candidate set is the union of each
// decoder's top-k Viterbi spans plus no-span; each candidate's exact sequence
// probability is averaged across decoders and the no-span hypothesis wins
// ties.
inline EnsembleDecision ensemble_decide(const std::vector<CrfPotentials>& potentials,
                                        std::size_t top_k = 5) {
  if (potentials.empty()) throw std::invalid_argument("ensemble_decide: no decoders");
  EnsembleDecision decision;

  std::set<std::pair<std::size_t, std::size_t>> candidate_set;
  for (const CrfPotentials& pot : potentials) {
    for (const ScoredSequence& seq : viterbi(pot, top_k)) {
      if (!is_valid_tag_sequence(seq.tags)) {
        ++decision.invalid_decodes;
        continue;
      }
      auto range = token_range_from_tags(seq.tags);
      if (range) candidate_set.insert(*range);
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> candidates(candidate_set.begin(),
                                                              candidate_set.end());

  double no_span_prob = 0.0;
  std::vector<double> span_probs(candidates.size(), 0.0);
  for (const CrfPotentials& pot : potentials) {
    const SpanPosteriors post = span_posteriors(pot, candidates);
    no_span_prob += post.no_span;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      span_probs[i] += post.spans[i].second;
  }
  const double scale = 1.0 / static_cast<double>(potentials.size());
  no_span_prob *= scale;
  for (double& p : span_probs) p *= scale;

  decision.probability = no_span_prob;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (span_probs[i] > decision.probability) {  // ties go to no-span
      decision.probability = span_probs[i];
      decision.token_range = candidates[i];
    }
  }
  return decision;
}

template <typename Real>
SpanPrediction ensemble_predict(
    const std::vector<const TaggerModel<Real>*>& models, const Vocabulary& vocab,
    const std::string& text, std::size_t top_k = 5, bool requested = false,
    bool use_extra_features = false, std::size_t* invalid_counter = nullptr) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no decoders");
  NoGradGuard guard;
  const TokenizedText tokens = tokenize(text, vocab);
  ExtraFeatures features = make_extra_features(tokens, requested);

  std::vector<CrfPotentials> potentials;
  potentials.reserve(models.size());
  for (const TaggerModel<Real>* model : models) {
    auto out = model->decode(tokens, tokens,
                             use_extra_features && model->has_residual_layer()
                                 ? &features
                                 : nullptr);
    potentials.push_back(crf_potentials_from(out.potentials));
  }

  const EnsembleDecision decision = ensemble_decide(potentials, top_k);
  if (invalid_counter) *invalid_counter += decision.invalid_decodes;
  SpanPrediction prediction;
  prediction.probability = decision.probability;
  if (decision.token_range)
    prediction.span = CharSpan{tokens.offsets[decision.token_range->first].begin,
                               tokens.offsets[decision.token_range->second - 1].end};
  return prediction;
}

// ---------------------------------------------------------------------------
// dataset-level evaluation

template <typename Real>
std::vector<Prediction> predict_dataset(
    const std::vector<const TaggerModel<Real>*>& models, const Vocabulary& vocab,
    const std::vector<LabeledExample>& examples, bool use_extra_features = false,
    std::size_t top_k = 5, std::size_t* invalid_counter = nullptr) {
  std::vector<Prediction> predictions;
  predictions.reserve(examples.size());
  for (const LabeledExample& e : examples) {
    SpanPrediction p;
    if (models.size() == 1) {
      p = predict_span(*models[0], vocab, e.text, e.requested, use_extra_features);
      if (p.invalid_decode && invalid_counter) ++*invalid_counter;
    } else {
      p = ensemble_predict(models, vocab, e.text, top_k, e.requested,
                           use_extra_features, invalid_counter);
    }
    predictions.push_back(Prediction{e.source_id, e.slot, p.span});
  }
  return predictions;
}

// ---------------------------------------------------------------------------
// no-fine-tuning probe

struct ProbeReport {
  std::vector<SpanPrediction> predictions;
  double fraction_predicted = 0.0;   // utterances where a value was extracted
  double fraction_matching_label = 0.0;  // of predictions, exact match to any label
};

// Feeds each utterance as both template and input and extracts at most one
// value per sentence from the pretrained model.
template <typename Real>
ProbeReport probe_without_finetuning(const TaggerModel<Real>& model,
                                     const Vocabulary& vocab,
                                     const std::vector<std::string>& utterances,
                                     const std::vector<LabeledExample>* labeled = nullptr) {
  ProbeReport report;
  report.predictions.reserve(utterances.size());
  std::map<std::string, std::vector<CharSpan>> labeled_spans;
  if (labeled)
    for (const LabeledExample& e : *labeled)
      if (e.span) labeled_spans[e.text].push_back(*e.span);

  std::size_t predicted = 0, matched = 0;
  for (const std::string& text : utterances) {
    SpanPrediction p = predict_span(model, vocab, text);
    if (p.span) {
      ++predicted;
      auto it = labeled_spans.find(text);
      if (it != labeled_spans.end())
        for (const CharSpan& g : it->second)
          if (g == *p.span) {
            ++matched;
            break;
          }
    }
    report.predictions.push_back(std::move(p));
  }
  if (!utterances.empty())
    report.fraction_predicted =
        static_cast<double>(predicted) / static_cast<double>(utterances.size());
  if (predicted > 0)
    report.fraction_matching_label =
        static_cast<double>(matched) / static_cast<double>(predicted);
  return report;
}

// ---------------------------------------------------------------------------
// parameter copying (decoder cloning for ensembles)

template <typename Real>
void copy_parameters(const NamedParams<Real>& src, NamedParams<Real>& dst) {
  std::map<std::string, const Tensor<Real>*> by_name;
  for (const auto& [name, tensor] : src) by_name[name] = &tensor;
  for (auto& [name, tensor] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::invalid_argument("copy_parameters: missing source tensor " + name);
    if (it->second->shape() != tensor.shape())
      throw std::invalid_argument("copy_parameters: shape mismatch for " + name);
    tensor.value() = it->second->value();
  }
}

// ---------------------------------------------------------------------------
// episodic few-shot evaluation

struct EpisodicConfig {
  std::size_t shots = 5;             // support examples per episode
  std::size_t decoders_per_slot = 3;
  std::size_t episodes_per_domain = 3;
  std::size_t query_positives_per_slot = 8;
  std::uint64_t seed = 1;
  FinetuneConfig further_pretrain;
  FinetuneConfig episode_finetune;
};

struct DomainEpisodeResult {
  std::string domain;
  double mean_macro_f1 = 0.0;
  std::vector<double> episode_f1;
  std::vector<std::string> slots;
};

// Leave-one-domain-out 5-shot evaluation: further-pretrain a single decoder
// on the source domains (slot names appended to templates), then per episode
// fine-tune decoders_per_slot decoders per slot on the support set, ensemble
// them, and score exact-match F1 on the query set.
template <typename Real>
std::vector<DomainEpisodeResult> episodic_eval(
    const std::map<std::string, std::vector<LabeledExample>>& domains,
    const ModelConfig& model_config, const NamedParams<Real>& encoder_src,
    const NamedParams<Real>& decoder_src, const Vocabulary& vocab,
    const EpisodicConfig& config) {
  if (domains.size() < 2)
    throw std::invalid_argument("episodic_eval: need at least two domains");

  std::vector<DomainEpisodeResult> results;
  for (const auto& [held_out, held_examples] : domains) {
    std::set<std::string> slot_set;
    for (const LabeledExample& e : held_examples) slot_set.insert(e.slot);
    if (slot_set.empty())
      throw std::invalid_argument("episodic_eval: domain " + held_out + " has no slots");

    std::vector<LabeledExample> source_pool;
    for (const auto& [name, examples] : domains)
      if (name != held_out)
        source_pool.insert(source_pool.end(), examples.begin(), examples.end());

    // One decoder further-pretrained on all slots of the source domains.
    Rng model_rng = Rng(config.seed).substream("episodic/" + held_out);
    TaggerModel<Real> base(model_config, model_rng);
    {
      NamedParams<Real> enc = base.encoder_parameters();
      copy_parameters(encoder_src, enc);
      NamedParams<Real> dec = base.decoder_parameters();
      copy_parameters(decoder_src, dec);
    }
    further_pretrain_decoder(base, vocab, source_pool, config.further_pretrain);
    const NamedParams<Real> further_dec = base.decoder_parameters();

    DomainEpisodeResult domain_result;
    domain_result.domain = held_out;
    domain_result.slots.assign(slot_set.begin(), slot_set.end());

    // Utterance-level view: one item per source_id, carrying every slot span
    // it is labeled with. This keeps (slot, id) keys unique even when the
    // input lists one example per (utterance, slot).
    struct Utterance {
      std::string id, text;
      bool requested = false;
      std::map<std::string, CharSpan> spans;
    };
    std::vector<Utterance> utterances;
    {
      std::map<std::string, std::size_t> by_id;
      for (const LabeledExample& e : held_examples) {
        auto [it, inserted] = by_id.emplace(e.source_id, utterances.size());
        if (inserted) utterances.push_back(Utterance{e.source_id, e.text, e.requested, {}});
        if (e.span) utterances[it->second].spans[e.slot] = *e.span;
      }
    }
    auto as_example = [](const Utterance& u, const std::string& slot) {
      LabeledExample e;
      e.text = u.text;
      e.slot = slot;
      e.requested = u.requested;
      e.source_id = u.id;
      auto it = u.spans.find(slot);
      if (it != u.spans.end()) e.span = it->second;
      return e;
    };

    Rng episode_rng = Rng(config.seed).substream("episodes/" + held_out);
    for (std::size_t ep = 0; ep < config.episodes_per_domain; ++ep) {
      std::map<std::string, std::vector<std::size_t>> positives_by_slot;
      for (std::size_t i = 0; i < utterances.size(); ++i)
        for (const auto& [slot, span] : utterances[i].spans)
          positives_by_slot[slot].push_back(i);

      // Support: around `shots` utterances covering all slots.
      std::vector<std::size_t> support;
      std::set<std::size_t> in_support;
      for (const std::string& slot : domain_result.slots) {
        auto& pool = positives_by_slot[slot];
        if (pool.empty())
          throw std::invalid_argument("episodic_eval: slot " + slot +
                                      " has no examples with values");
        for (int attempt = 0; attempt < 64; ++attempt) {
          const std::size_t pick = pool[episode_rng.next_below(pool.size())];
          if (in_support.insert(pick).second) {
            support.push_back(pick);
            break;
          }
          if (in_support.size() >= pool.size()) break;
        }
      }
      while (support.size() < config.shots) {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < utterances.size(); ++i)
          if (!in_support.count(i) && !utterances[i].spans.empty()) rest.push_back(i);
        if (rest.empty()) break;
        const std::size_t pick = rest[episode_rng.next_below(rest.size())];
        support.push_back(pick);
        in_support.insert(pick);
      }

      // Query: unused positives (capped per slot) plus no-value utterances.
      std::vector<std::size_t> query;
      std::set<std::size_t> in_query;
      for (const std::string& slot : domain_result.slots) {
        std::size_t taken = 0;
        for (std::size_t i : positives_by_slot[slot]) {
          if (in_support.count(i) || in_query.count(i)) continue;
          if (taken++ >= config.query_positives_per_slot) break;
          query.push_back(i);
          in_query.insert(i);
        }
      }
      for (std::size_t i = 0; i < utterances.size(); ++i)
        if (utterances[i].spans.empty() && !in_support.count(i) && !in_query.count(i)) {
          query.push_back(i);
          in_query.insert(i);
        }

      std::vector<Prediction> predictions;
      std::vector<LabeledExample> gold;
      for (const std::string& slot : domain_result.slots) {
        std::vector<LabeledExample> slot_train;
        for (std::size_t i : support) slot_train.push_back(as_example(utterances[i], slot));

        std::vector<std::unique_ptr<TaggerModel<Real>>> decoders;
        std::vector<const TaggerModel<Real>*> decoder_ptrs;
        for (std::size_t d = 0; d < config.decoders_per_slot; ++d) {
          Rng decoder_rng = Rng(config.seed).substream(
              "episodic-decoder/" + held_out + "/" + slot + "/" + std::to_string(ep) +
              "/" + std::to_string(d));
          auto decoder = std::make_unique<TaggerModel<Real>>(model_config, decoder_rng);
          NamedParams<Real> enc = decoder->encoder_parameters();
          copy_parameters(encoder_src, enc);
          NamedParams<Real> dec = decoder->decoder_parameters();
          copy_parameters(further_dec, dec);
          FinetuneConfig ft = config.episode_finetune;
          ft.seed = splitmix64_once(config.seed ^ (d + 1) ^ fnv1a64(slot));
          finetune(*decoder, vocab, slot_train, ft);
          decoder_ptrs.push_back(decoder.get());
          decoders.push_back(std::move(decoder));
        }

        std::vector<LabeledExample> slot_query;
        for (std::size_t i : query) slot_query.push_back(as_example(utterances[i], slot));
        std::vector<Prediction> slot_preds =
            predict_dataset(decoder_ptrs, vocab, slot_query);
        predictions.insert(predictions.end(), slot_preds.begin(), slot_preds.end());
        gold.insert(gold.end(), slot_query.begin(), slot_query.end());
      }

      const EvalReport report = span_f1(predictions, gold);
      domain_result.episode_f1.push_back(report.macro_f1);
    }

    double sum = 0.0;
    for (double f : domain_result.episode_f1) sum += f;
    domain_result.mean_macro_f1 =
        domain_result.episode_f1.empty()
            ? 0.0
            : sum / static_cast<double>(domain_result.episode_f1.size());
    results.push_back(std::move(domain_result));
  }
  return results;
}

}  // namespace clozespan
