#pragma once

// Pretraining and fine-tuning loops.
//
// Pretraining minimizes the CRF negative log-likelihood over cloze pairs with
// Adadelta, optionally adding the contrastive dot-product loss over the BOS
// encodings of the batch's positive pairs. Fine-tuning freezes the encoder,
// feeds each utterance as both template and input, and trains the decoder
// with Adam under cosine-decayed learning rate and encoder-output dropout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "clozespan/checkpoint.hpp"
#include "clozespan/crf.hpp"
#include "clozespan/labeled_data.hpp"
#include "clozespan/model.hpp"
#include "clozespan/optim.hpp"
#include "clozespan/pair_builder.hpp"
#include "clozespan/subword.hpp"
#include "clozespan/tags.hpp"

namespace clozespan {

// Separator between an utterance and the slot name appended to the template
// sentence during decoder further-pretraining.
inline constexpr std::string_view kSlotNameSeparator = " : ";

// Examples whose gold span moves by more than this many bytes under outward
// snapping are dropped during data preparation.
inline constexpr std::size_t kMaxSnapShift = 2;

// ---------------------------------------------------------------------------
// schedules

// Cosine decay from `start` at step 0 to `end` at step `decay_steps`, held at
// `end` afterwards. Endpoints are exact.
inline double cosine_decay(double start, double end, std::int64_t step,
                           std::int64_t decay_steps) {
  if (step <= 0) return start;
  if (step >= decay_steps) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(decay_steps);
  return end + (start - end) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// Annealing factor C: linear from 0 at step 0 to sqrt(d) at `anneal_batches`.
inline double aux_anneal_c(std::int64_t step, std::int64_t anneal_batches,
                           std::size_t d) {
  const double frac =
      anneal_batches <= 0
          ? 1.0
          : std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal_batches));
  return std::sqrt(static_cast<double>(d)) * frac;
}

struct AuxLossState {
  double c = 0.0;
  std::int64_t step = 0;
  std::size_t n = 0;
};

// The contrastive dot-product loss over matched BOS encodings:
//   -sum_i C<f_t_i, f_i_i> + sum_i log sum_j exp(C<f_t_i, f_i_j>)
// with <.,.> cosine similarity.
template <typename Real>
Tensor<Real> aux_loss(const std::vector<Tensor<Real>>& f_template,
                      const std::vector<Tensor<Real>>& f_input, double c) {
  if (f_template.empty() || f_template.size() != f_input.size())
    throw std::invalid_argument("aux_loss: batch sides must be non-empty and aligned");
  Tensor<Real> t_rows = l2_normalize_rows(stack_rows(f_template));
  Tensor<Real> i_rows = l2_normalize_rows(stack_rows(f_input));
  Tensor<Real> sims = mul_scalar(matmul(t_rows, transpose(i_rows)), static_cast<Real>(c));
  return sub(reduce_sum(logsumexp(sims)), reduce_sum(diag(sims)));
}

// ---------------------------------------------------------------------------
// configuration

struct PretrainConfig {
  std::size_t batch_size = 256;
  std::size_t negatives_per_batch = 64;
  double learning_rate = 0.3;
  double adadelta_rho = 0.9;
  std::int64_t aux_anneal_batches = 10000;
  bool use_aux_loss = true;
  std::int64_t max_steps = 20000;
  std::int64_t eval_every = 500;
  std::int64_t log_every = 50;
  // Optional early stop once held-out precision and recall both reach the
  // target (0 disables).
  double target_eval_precision = 0.0;
  double target_eval_recall = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size == 0 || negatives_per_batch >= batch_size)
      throw std::invalid_argument(
          "PretrainConfig: need negatives_per_batch < batch_size");
  }
};

struct FinetuneConfig {
  std::int64_t steps = 4000;
  std::size_t batch_size = 64;
  double early_stop_loss = 0.001;
  double lr_start = 0.001;
  double lr_end = 1e-6;
  std::int64_t lr_decay_steps = 3500;
  double dropout_start = 0.5;
  std::int64_t dropout_decay_steps = 4000;
  double value_fraction = 0.2;
  double ema_decay = 0.98;
  bool use_extra_features = false;
  std::int64_t log_every = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr_end < lr_start))
      throw std::invalid_argument("FinetuneConfig: lr_end must be < lr_start");
    if (value_fraction < 0.0 || value_fraction > 1.0)
      throw std::invalid_argument("FinetuneConfig: value_fraction must be in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// metrics log

class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) throw std::runtime_error("cannot write metrics log: " + path);
      out_ << "step,loss,lr,c,dropout,eval_precision,eval_recall\n";
    }
  }

  void row(std::int64_t step, double loss, double lr, double c, double dropout,
           std::optional<double> eval_p = std::nullopt,
           std::optional<double> eval_r = std::nullopt) {
    if (!out_.is_open()) return;
    out_ << step << ',' << loss << ',' << lr << ',' << c << ',' << dropout << ',';
    if (eval_p) out_ << *eval_p;
    out_ << ',';
    if (eval_r) out_ << *eval_r;
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// batch composition

struct PretrainBatchItem {
  std::size_t template_index = 0;
  std::size_t input_index = 0;
  bool is_negative = false;
};

// Index-level batch composition shared by the public ClozePair batcher and
// the training loop. Positives sample one pair; negatives pair a template
// with the input sentence of an unrelated positive (different keyphrase).
template <typename KeyphraseOf>
std::vector<PretrainBatchItem> compose_pretrain_indices(std::size_t count,
                                                        KeyphraseOf&& keyphrase_of,
                                                        const PretrainConfig& config,
                                                        Rng& rng) {
  config.validate();
  if (count == 0) throw std::invalid_argument("compose_pretrain_indices: no positives");
  std::vector<PretrainBatchItem> batch;
  batch.reserve(config.batch_size);
  const std::size_t num_positive = config.batch_size - config.negatives_per_batch;
  for (std::size_t i = 0; i < num_positive; ++i) {
    const std::size_t idx = rng.next_below(count);
    batch.push_back(PretrainBatchItem{idx, idx, false});
  }
  for (std::size_t i = 0; i < config.negatives_per_batch; ++i) {
    const std::size_t a = rng.next_below(count);
    std::size_t b = rng.next_below(count);
    for (int attempt = 0; attempt < 64 && keyphrase_of(b) == keyphrase_of(a); ++attempt)
      b = rng.next_below(count);
    batch.push_back(PretrainBatchItem{a, b, true});
  }
  return batch;
}

// batch_size examples, exactly negatives_per_batch of which are negatives.
// Negatives keep the template's own BLANK and carry no span.
inline std::vector<ClozePair> compose_pretrain_batch(
    const std::vector<ClozePair>& positives, const PretrainConfig& config, Rng& rng) {
  const std::vector<PretrainBatchItem> items = compose_pretrain_indices(
      positives.size(), [&](std::size_t i) -> const std::string& {
        return positives[i].keyphrase;
      }, config, rng);
  std::vector<ClozePair> batch;
  batch.reserve(items.size());
  for (const PretrainBatchItem& item : items) {
    if (!item.is_negative) {
      batch.push_back(positives[item.input_index]);
      continue;
    }
    const ClozePair& a = positives[item.template_index];
    const ClozePair& b = positives[item.input_index];
    ClozePair neg;
    neg.template_text = a.template_text;
    neg.input_text = b.input_text;
    neg.span = std::nullopt;
    neg.keyphrase = a.keyphrase;
    neg.group_key = a.group_key;
    neg.is_negative = true;
    batch.push_back(std::move(neg));
  }
  return batch;
}

// Fine-tuning batch: the largest batch not exceeding config.batch_size whose
// positive share is exactly value_fraction and which fits in the available
// distinct examples. Returns indices into `positives` then `negatives`.
struct FinetuneBatch {
  std::vector<std::size_t> positive_indices;
  std::vector<std::size_t> negative_indices;
};

inline FinetuneBatch compose_finetune_batch(std::size_t num_positives,
                                            std::size_t num_negatives,
                                            const FinetuneConfig& config, Rng& rng) {
  if (num_positives == 0)
    throw std::invalid_argument("compose_finetune_batch: no examples with a value");

  // Smallest integral ratio p:n with p/(p+n) = value_fraction.
  std::size_t unit_pos = 1, unit_total = 0;
  for (std::size_t total = 1; total <= config.batch_size; ++total) {
    const double p = config.value_fraction * static_cast<double>(total);
    if (std::abs(p - std::round(p)) < 1e-9 && std::round(p) >= 1.0) {
      unit_total = total;
      unit_pos = static_cast<std::size_t>(std::round(p));
      break;
    }
  }

  std::size_t take_pos = 0, take_neg = 0;
  if (config.value_fraction == 0.0) {
    take_neg = std::min(num_negatives, config.batch_size);
  } else if (unit_total == 0 || num_negatives == 0) {
    // Ratio unattainable (e.g. no negatives at all): fall back to positives.
    take_pos = std::min(num_positives, config.batch_size);
  } else {
    const std::size_t unit_neg = unit_total - unit_pos;
    std::size_t units = config.batch_size / unit_total;
    units = std::min(units, num_positives / unit_pos);
    if (unit_neg > 0) units = std::min(units, num_negatives / unit_neg);
    units = std::max<std::size_t>(units, 1);
    take_pos = std::min(units * unit_pos, num_positives);
    take_neg = std::min(units * unit_neg, num_negatives);
    // Shrink to the exact ratio when the data cannot fill the last unit.
    while (take_pos * unit_neg != take_neg * unit_pos && take_pos > unit_pos) {
      take_pos -= unit_pos;
      take_neg = take_pos * unit_neg / unit_pos;
    }
  }

  auto sample_without_replacement = [&](std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.next_below(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  };

  FinetuneBatch batch;
  batch.positive_indices = sample_without_replacement(num_positives, take_pos);
  if (take_neg > 0)
    batch.negative_indices = sample_without_replacement(num_negatives, take_neg);
  return batch;
}

// ---------------------------------------------------------------------------
// prepared data

struct PreparedPair {
  TokenizedText template_tokens;
  TokenizedText input_tokens;
  TagSequence gold;               // over input tokens; all BEFORE for negatives
  std::optional<CharSpan> gold_span;  // snapped character span
  std::string keyphrase;
};

struct PrepareStats {
  std::size_t kept = 0;
  std::size_t dropped_too_long = 0;
  std::size_t dropped_snap = 0;
};

// Tokenizes pairs and converts gold character spans to tag sequences. Pairs
// that exceed max_seq_len, whose span covers no token, or whose span moves by
// more than kMaxSnapShift bytes under snapping are dropped.
inline std::vector<PreparedPair> prepare_pairs(const std::vector<ClozePair>& pairs,
                                               const Vocabulary& vocab,
                                               std::size_t max_seq_len,
                                               PrepareStats* stats = nullptr) {
  std::vector<PreparedPair> prepared;
  prepared.reserve(pairs.size());
  PrepareStats local;
  for (const ClozePair& pair : pairs) {
    PreparedPair p;
    p.template_tokens = tokenize(pair.template_text, vocab);
    p.input_tokens = tokenize(pair.input_text, vocab);
    p.keyphrase = pair.keyphrase;
    if (p.template_tokens.size() > max_seq_len || p.input_tokens.size() > max_seq_len) {
      ++local.dropped_too_long;
      continue;
    }
    if (pair.span) {
      auto snapped = snap_span(p.input_tokens, *pair.span);
      if (!snapped || snapped->max_shift > kMaxSnapShift) {
        ++local.dropped_snap;
        continue;
      }
      p.gold = tags_from_token_range(
          p.input_tokens.size(), std::make_pair(snapped->tok_begin, snapped->tok_end));
      p.gold_span = snapped->char_span;
    } else {
      p.gold = TagSequence(p.input_tokens.size(), Tag::kBefore);
    }
    prepared.push_back(std::move(p));
    ++local.kept;
  }
  if (stats) *stats = local;
  return prepared;
}

// ---------------------------------------------------------------------------
// intrinsic pair evaluation

struct PairEvalResult {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold_present = 0;
  std::size_t invalid_decodes = 0;
};

namespace detail {

template <typename Real>
std::optional<CharSpan> predict_span_from_potentials(const Tensor<Real>& potentials,
                                                     const TokenizedText& tokens,
                                                     std::size_t* invalid_counter,
                                                     double* prob_out = nullptr) {
  const CrfPotentials raw = crf_potentials_from(potentials);
  const std::vector<ScoredSequence> best = viterbi(raw, 1);
  if (prob_out) *prob_out = std::exp(best[0].log_prob);
  if (!is_valid_tag_sequence(best[0].tags)) {
    if (invalid_counter) ++*invalid_counter;
    return std::nullopt;
  }
  return tags_to_span(tokens, best[0].tags);
}

}  // namespace detail

// Exact span precision/recall over held-out pairs mixed with random negatives
// at the pretraining ratio (one negative per three positives).
template <typename Real>
PairEvalResult evaluate_pairs(const TaggerModel<Real>& model,
                              const std::vector<PreparedPair>& pairs,
                              std::uint64_t seed) {
  NoGradGuard guard;
  PairEvalResult result;
  if (pairs.empty()) return result;
  Rng rng(splitmix64_once(seed ^ 0x65Cull));

  auto judge = [&](const TokenizedText& tmpl, const TokenizedText& input,
                   const std::optional<CharSpan>& gold) {
    auto out = model.decode(tmpl, input);
    const std::optional<CharSpan> predicted = detail::predict_span_from_potentials(
        out.potentials, input, &result.invalid_decodes);
    if (gold) ++result.gold_present;
    if (predicted) ++result.predicted;
    if (predicted && gold && *predicted == *gold) ++result.true_positives;
  };

  for (const PreparedPair& p : pairs)
    judge(p.template_tokens, p.input_tokens, p.gold_span);

  const std::size_t num_negatives = pairs.size() / 3;
  for (std::size_t i = 0; i < num_negatives; ++i) {
    const PreparedPair& a = pairs[rng.next_below(pairs.size())];
    const PreparedPair* b = nullptr;
    for (int attempt = 0; attempt < 64 && !b; ++attempt) {
      const PreparedPair& cand = pairs[rng.next_below(pairs.size())];
      if (cand.keyphrase != a.keyphrase) b = &cand;
    }
    if (!b) continue;
    judge(a.template_tokens, b->input_tokens, std::nullopt);
  }

  result.precision = result.predicted == 0
                         ? 0.0
                         : static_cast<double>(result.true_positives) /
                               static_cast<double>(result.predicted);
  result.recall = result.gold_present == 0
                      ? 0.0
                      : static_cast<double>(result.true_positives) /
                            static_cast<double>(result.gold_present);
  return result;
}

// ---------------------------------------------------------------------------
// pretraining

struct PretrainResult {
  std::int64_t steps_run = 0;
  double final_loss = 0.0;
  PairEvalResult final_eval;
  PrepareStats train_prep;
};

template <typename Real>
PretrainResult pretrain(TaggerModel<Real>& model, const Vocabulary& vocab,
                        const std::vector<ClozePair>& train_pairs,
                        const std::vector<ClozePair>& heldout_pairs,
                        const PretrainConfig& config,
                        const std::string& metrics_path = "") {
  config.validate();
  PretrainResult result;
  const std::size_t max_len = model.config().max_seq_len;
  std::vector<PreparedPair> train =
      prepare_pairs(train_pairs, vocab, max_len, &result.train_prep);
  std::vector<PreparedPair> heldout = prepare_pairs(heldout_pairs, vocab, max_len);
  if (train.empty()) throw std::invalid_argument("pretrain: no usable training pairs");

  NamedParams<Real> params = model.trainable_parameters(Phase::kPretrain);
  Adadelta<Real> optimizer(config.learning_rate, config.adadelta_rho);
  Rng batch_rng = Rng(config.seed).substream("pretrain/batches");
  Rng dropout_rng = Rng(config.seed).substream("pretrain/dropout");
  MetricsLog log(metrics_path);

  const double encoder_dropout = model.config().dropout_rate;

  for (std::int64_t step = 0; step < config.max_steps; ++step) {
    const std::vector<PretrainBatchItem> items = compose_pretrain_indices(
        train.size(), [&](std::size_t i) -> const std::string& {
          return train[i].keyphrase;
        }, config, batch_rng);

    std::vector<Tensor<Real>> losses;
    std::vector<Tensor<Real>> f_template, f_input;
    losses.reserve(config.batch_size);
    for (const PretrainBatchItem& item : items) {
      const PreparedPair& tpl = train[item.template_index];
      const PreparedPair& inp = train[item.input_index];
      auto out = model.decode(tpl.template_tokens, inp.input_tokens, nullptr,
                              /*training=*/true, encoder_dropout, &dropout_rng);
      losses.push_back(crf_nll(
          out.potentials, item.is_negative
                              ? TagSequence(inp.input_tokens.size(), Tag::kBefore)
                              : inp.gold));
      if (config.use_aux_loss && !item.is_negative) {
        f_template.push_back(out.f_template);
        f_input.push_back(out.f_input);
      }
    }

    Tensor<Real> loss = mul_scalar(
        [&] {
          Tensor<Real> sum = losses[0];
          for (std::size_t i = 1; i < losses.size(); ++i) sum = add(sum, losses[i]);
          return sum;
        }(),
        Real(1.0 / static_cast<double>(losses.size())));

    double c = 0.0;
    if (config.use_aux_loss && !f_template.empty()) {
      c = aux_anneal_c(step, config.aux_anneal_batches, model.config().aux_dim());
      Tensor<Real> aux = aux_loss(f_template, f_input, c);
      loss = add(loss, mul_scalar(aux, Real(1.0 / static_cast<double>(f_template.size()))));
    }

    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value))
      throw std::runtime_error("pretrain: non-finite loss " + std::to_string(loss_value) +
                               " at step " + std::to_string(step));

    backward(loss);
    optimizer.step(params);
    zero_grads(params);

    result.steps_run = step + 1;
    result.final_loss = loss_value;

    const bool eval_now =
        !heldout.empty() && config.eval_every > 0 &&
        ((step + 1) % config.eval_every == 0 || step + 1 == config.max_steps);
    std::optional<double> eval_p, eval_r;
    if (eval_now) {
      result.final_eval = evaluate_pairs(model, heldout, config.seed);
      eval_p = result.final_eval.precision;
      eval_r = result.final_eval.recall;
    }
    if (config.log_every > 0 && (step % config.log_every == 0 || eval_now))
      log.row(step, loss_value, config.learning_rate, c, encoder_dropout, eval_p, eval_r);

    if (eval_now && config.target_eval_precision > 0.0 &&
        result.final_eval.precision >= config.target_eval_precision &&
        result.final_eval.recall >= config.target_eval_recall)
      break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// fine-tuning

struct PreparedExample {
  TokenizedText template_tokens;  // equals input tokens unless a slot name is appended
  TokenizedText input_tokens;
  TagSequence gold;
  std::optional<CharSpan> gold_span;
  ExtraFeatures features;
  bool has_value = false;
};

struct FinetuneResult {
  std::int64_t steps_run = 0;
  double final_loss_ema = 0.0;
  bool early_stopped = false;
  PrepareStats prep;
};

inline std::vector<PreparedExample> prepare_labeled(
    const std::vector<LabeledExample>& examples, const Vocabulary& vocab,
    std::size_t max_seq_len, bool append_slot_to_template, PrepareStats* stats = nullptr) {
  std::vector<PreparedExample> prepared;
  prepared.reserve(examples.size());
  PrepareStats local;
  for (const LabeledExample& e : examples) {
    PreparedExample p;
    p.input_tokens = tokenize(e.text, vocab);
    if (append_slot_to_template) {
      p.template_tokens =
          tokenize(e.text + std::string(kSlotNameSeparator) + e.slot, vocab);
    } else {
      p.template_tokens = p.input_tokens;
    }
    if (p.template_tokens.size() > max_seq_len || p.input_tokens.size() > max_seq_len) {
      ++local.dropped_too_long;
      continue;
    }
    if (e.span) {
      auto snapped = snap_span(p.input_tokens, *e.span);
      if (!snapped || snapped->max_shift > kMaxSnapShift) {
        ++local.dropped_snap;
        continue;
      }
      p.gold = tags_from_token_range(
          p.input_tokens.size(), std::make_pair(snapped->tok_begin, snapped->tok_end));
      p.gold_span = snapped->char_span;
      p.has_value = true;
    } else {
      p.gold = TagSequence(p.input_tokens.size(), Tag::kBefore);
    }
    p.features = make_extra_features(p.input_tokens, e.requested);
    prepared.push_back(std::move(p));
    ++local.kept;
  }
  if (stats) *stats = local;
  return prepared;
}

namespace detail {

template <typename Real>
FinetuneResult finetune_impl(TaggerModel<Real>& model, const Vocabulary& vocab,
                             const std::vector<LabeledExample>& train_examples,
                             const FinetuneConfig& config, bool append_slot_to_template,
                             const std::string& metrics_path) {
  config.validate();
  if (train_examples.empty())
    throw std::invalid_argument("finetune: empty training set");

  FinetuneResult result;
  std::vector<PreparedExample> prepared = prepare_labeled(
      train_examples, vocab, model.config().max_seq_len, append_slot_to_template,
      &result.prep);

  std::vector<const PreparedExample*> positives, negatives;
  for (const PreparedExample& p : prepared)
    (p.has_value ? positives : negatives).push_back(&p);
  if (positives.empty())
    throw std::invalid_argument("finetune: no usable examples with a value");

  Rng init_rng = Rng(config.seed).substream("finetune/init");
  if (config.use_extra_features) model.enable_residual_layer(init_rng);

  NamedParams<Real> params = model.trainable_parameters(Phase::kFinetune);
  Adam<Real> optimizer([&config](std::int64_t step) {
    return cosine_decay(config.lr_start, config.lr_end, step, config.lr_decay_steps);
  });
  Rng batch_rng = Rng(config.seed).substream("finetune/batches");
  Rng dropout_rng = Rng(config.seed).substream("finetune/dropout");
  MetricsLog log(metrics_path);

  double ema = 0.0;
  bool ema_started = false;
  for (std::int64_t step = 0; step < config.steps; ++step) {
    const double dropout_rate = cosine_decay(config.dropout_start, 0.0, step,
                                             config.dropout_decay_steps);
    const FinetuneBatch batch = compose_finetune_batch(
        positives.size(), negatives.size(), config, batch_rng);

    std::vector<Tensor<Real>> losses;
    auto run_example = [&](const PreparedExample& p) {
      const ExtraFeatures* extra = config.use_extra_features ? &p.features : nullptr;
      auto out = model.decode(p.template_tokens, p.input_tokens, extra,
                              /*training=*/true, dropout_rate, &dropout_rng);
      losses.push_back(crf_nll(out.potentials, p.gold));
    };
    for (std::size_t idx : batch.positive_indices) run_example(*positives[idx]);
    for (std::size_t idx : batch.negative_indices) run_example(*negatives[idx]);

    Tensor<Real> loss = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
    loss = mul_scalar(loss, Real(1.0 / static_cast<double>(losses.size())));

    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value))
      throw std::runtime_error("finetune: non-finite loss at step " +
                               std::to_string(step));

    backward(loss);
    const double lr = cosine_decay(config.lr_start, config.lr_end, step,
                                   config.lr_decay_steps);
    optimizer.step(params);
    zero_grads(params);

    ema = ema_started ? config.ema_decay * ema + (1.0 - config.ema_decay) * loss_value
                      : loss_value;
    ema_started = true;
    result.steps_run = step + 1;
    result.final_loss_ema = ema;
    if (config.log_every > 0 && step % config.log_every == 0)
      log.row(step, loss_value, lr, 0.0, dropout_rate);

    if (ema < config.early_stop_loss) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace detail

// Standard fine-tuning for one slot: every utterance is both template and
// input, no BLANK is involved.
template <typename Real>
FinetuneResult finetune(TaggerModel<Real>& model, const Vocabulary& vocab,
                        const std::vector<LabeledExample>& train_examples,
                        const FinetuneConfig& config,
                        const std::string& metrics_path = "") {
  return detail::finetune_impl(model, vocab, train_examples, config,
                               /*append_slot_to_template=*/false, metrics_path);
}

// Decoder further-pretraining over pooled multi-domain data: the slot name is
// appended to the template sentence, so one decoder trains on all slots.
template <typename Real>
FinetuneResult further_pretrain_decoder(TaggerModel<Real>& model,
                                        const Vocabulary& vocab,
                                        const std::vector<LabeledExample>& examples,
                                        const FinetuneConfig& config,
                                        const std::string& metrics_path = "") {
  return detail::finetune_impl(model, vocab, examples, config,
                               /*append_slot_to_template=*/true, metrics_path);
}

}  // namespace clozespan
