// Command-line entry point tying the pipeline together:
//
//   gen-synthetic  write a synthetic corpus plus labeled slot data
//   prepare-data   filter -> count -> extract keyphrases -> pair -> split
//   pretrain       train encoder+decoder on cloze pairs
//   finetune       train a per-slot decoder on labeled data (frozen encoder)
//   evaluate       score span-exact-match F1 (full data, fractions, episodic,
//                  or the no-fine-tuning probe)
//   predict        read utterances from stdin, print one span (or NONE) per
//                  line with its probability
//
// Every subcommand writes a manifest.json into its output directory before
// doing any work; a run is reproducible from the manifest alone.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clozespan/checkpoint.hpp"
#include "clozespan/corpus.hpp"
#include "clozespan/evaluation.hpp"
#include "clozespan/keyphrase.hpp"
#include "clozespan/model.hpp"
#include "clozespan/pair_builder.hpp"
#include "clozespan/subword.hpp"
#include "clozespan/synthetic.hpp"
#include "clozespan/training.hpp"

namespace fs = std::filesystem;
using namespace clozespan;
using Real = float;

namespace {

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing file: " + path);
  std::uint64_t h = kFnvOffsetBasis;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= kFnvPrime;
    }
    if (!in) break;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Written before work begins; sufficient to re-run the command identically.
void write_manifest(const fs::path& out_dir, const std::string& subcommand,
                    const nlohmann::json& config, std::uint64_t seed,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  fs::create_directories(out_dir);
  nlohmann::json manifest;
  manifest["subcommand"] = subcommand;
  manifest["config"] = config;
  manifest["seed"] = seed;
  manifest["timestamp"] = timestamp_utc();
  manifest["inputs"] = nlohmann::json::array();
  for (const std::string& path : inputs)
    manifest["inputs"].push_back({{"path", path}, {"fnv1a64", file_hash_hex(path)}});
  manifest["outputs"] = outputs;
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  out << manifest.dump(2) << "\n";
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw std::runtime_error("missing " + what + ": expected at " + path);
}

struct ModelFlags {
  std::size_t max_seq_len = 64;
  std::size_t encoder_layers = 2;
  std::size_t encoder_dim = 128;
  std::size_t encoder_ffn_dim = 256;
  std::size_t proj_dim = 32;
  std::size_t decoder_blocks = 2;
  std::size_t decoder_ffn_dim = 64;
  std::size_t decoder_attention_projection_dim = 16;
  std::size_t num_heads = 2;
  std::size_t residual_hidden_dim = 128;
  double dropout_rate = 0.0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--max-seq-len", max_seq_len, "Maximum tokens per sentence");
    cmd->add_option("--encoder-layers", encoder_layers, "Encoder blocks");
    cmd->add_option("--encoder-dim", encoder_dim, "Encoder width");
    cmd->add_option("--encoder-ffn-dim", encoder_ffn_dim, "Encoder FFN width");
    cmd->add_option("--proj-dim", proj_dim, "Projected decoder width");
    cmd->add_option("--decoder-blocks", decoder_blocks, "Decoder blocks");
    cmd->add_option("--decoder-ffn-dim", decoder_ffn_dim, "Decoder FFN width");
    cmd->add_option("--decoder-attn-proj", decoder_attention_projection_dim,
                    "Per-head attention projection width");
    cmd->add_option("--num-heads", num_heads, "Attention heads");
    cmd->add_option("--residual-hidden-dim", residual_hidden_dim,
                    "Residual feature layer hidden width");
    cmd->add_option("--dropout", dropout_rate, "Encoder-output dropout at pretraining");
  }

  ModelConfig to_config(std::size_t vocab_size) const {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.max_seq_len = max_seq_len;
    c.encoder_layers = encoder_layers;
    c.encoder_dim = encoder_dim;
    c.encoder_ffn_dim = encoder_ffn_dim;
    c.proj_dim = proj_dim;
    c.decoder_blocks = decoder_blocks;
    c.decoder_ffn_dim = decoder_ffn_dim;
    c.decoder_attention_projection_dim = decoder_attention_projection_dim;
    c.num_heads = num_heads;
    c.residual_hidden_dim = residual_hidden_dim;
    c.dropout_rate = dropout_rate;
    return c;
  }
};

struct FinetuneFlags {
  FinetuneConfig config;

  void attach(CLI::App* cmd) {
    cmd->add_option("--steps", config.steps, "Fine-tuning steps");
    cmd->add_option("--batch-size", config.batch_size, "Batch size");
    cmd->add_option("--early-stop-loss", config.early_stop_loss,
                    "Stop when the loss EMA drops below this");
    cmd->add_option("--lr-start", config.lr_start, "Initial learning rate");
    cmd->add_option("--lr-end", config.lr_end, "Final learning rate");
    cmd->add_option("--lr-decay-steps", config.lr_decay_steps, "Cosine decay steps");
    cmd->add_option("--dropout-start", config.dropout_start,
                    "Initial encoder-output dropout");
    cmd->add_option("--dropout-decay-steps", config.dropout_decay_steps,
                    "Dropout decay steps");
    cmd->add_option("--value-fraction", config.value_fraction,
                    "Share of batch examples that contain a value");
    cmd->add_option("--ema-decay", config.ema_decay, "Loss EMA decay");
    cmd->add_flag("--extra-features", config.use_extra_features,
                  "Use the residual feature layer (is_requested, token_is_numeric)");
    cmd->add_option("--seed", config.seed, "Random seed");
  }
};

TaggerModel<Real> load_model(const std::string& encoder_path,
                             const std::string& decoder_path, bool with_residual,
                             std::uint64_t seed = 1234) {
  const nlohmann::json meta = load_checkpoint_meta(encoder_path);
  ModelConfig config = ModelConfig::from_json(meta.at("model_config"));
  Rng rng(seed);
  TaggerModel<Real> model(config, rng);
  if (with_residual) model.enable_residual_layer(rng);
  NamedParams<Real> enc = model.encoder_parameters();
  load_checkpoint(encoder_path, enc);
  if (!decoder_path.empty()) {
    NamedParams<Real> dec = model.decoder_parameters();
    load_checkpoint(decoder_path, dec);
  }
  return model;
}

bool decoder_has_residual(const std::string& decoder_path) {
  const nlohmann::json meta = load_checkpoint_meta(decoder_path);
  return meta.value("has_residual_layer", false);
}

// ---------------------------------------------------------------------------

int run_gen_synthetic(const std::string& out_dir, synth::SyntheticConfig config) {
  write_manifest(out_dir, "gen-synthetic",
                 {{"corpus_sentences", config.corpus_sentences},
                  {"train_positives_per_slot", config.train_positives_per_slot},
                  {"train_negatives_per_slot", config.train_negatives_per_slot},
                  {"test_positives_per_slot", config.test_positives_per_slot},
                  {"test_negatives_per_slot", config.test_negatives_per_slot}},
                 config.seed, {},
                 {"corpus.tsv", "train.jsonl", "test.jsonl"});
  const synth::SyntheticData data = synth::make_synthetic(config);
  const fs::path dir(out_dir);
  {
    std::ofstream out(dir / "corpus.tsv");
    for (const RawComment& c : data.corpus) out << c.group_key << "\t" << c.text << "\n";
  }
  {
    std::ofstream out(dir / "train.jsonl");
    for (const auto& [domain, examples] : data.train_by_domain)
      write_labeled_jsonl(out, examples);
  }
  {
    std::ofstream out(dir / "test.jsonl");
    for (const auto& [domain, examples] : data.test_by_domain)
      write_labeled_jsonl(out, examples);
  }
  std::cout << "wrote " << data.corpus.size() << " corpus sentences and labeled data to "
            << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PrepareFlags {
  std::string corpus_path, out_dir;
  std::size_t min_chars = 9, max_chars = 127;
  double alpha = 0.8;
  double kp_threshold = std::numeric_limits<double>::quiet_NaN();
  double kp_density = 1.65;
  std::size_t max_kp_per_sentence = 2;
  double max_span_fraction = 0.5;
  double test_fraction = 0.05;
  std::size_t vocab_size = 4000;
  int oov_buckets = 100;
  std::uint64_t seed = 1;
};

int run_prepare_data(const PrepareFlags& flags) {
  require_file(flags.corpus_path, "corpus file");
  write_manifest(flags.out_dir, "prepare-data",
                 {{"min_chars", flags.min_chars},
                  {"max_chars", flags.max_chars},
                  {"alpha", flags.alpha},
                  {"kp_threshold", std::isnan(flags.kp_threshold)
                                       ? nlohmann::json(nullptr)
                                       : nlohmann::json(flags.kp_threshold)},
                  {"kp_density", flags.kp_density},
                  {"max_kp_per_sentence", flags.max_kp_per_sentence},
                  {"max_span_fraction", flags.max_span_fraction},
                  {"test_fraction", flags.test_fraction},
                  {"vocab_size", flags.vocab_size},
                  {"oov_buckets", flags.oov_buckets}},
                 flags.seed, {flags.corpus_path},
                 {"freq.tsv", "vocab.txt", "pairs.train.jsonl", "pairs.test.jsonl",
                  "stats.tsv"});
  const fs::path dir(flags.out_dir);

  const std::vector<RawComment> raw = read_corpus_file(flags.corpus_path);
  std::vector<RawComment> filtered;
  for (const RawComment& c : raw) {
    auto kept = filter_by_length(c, flags.min_chars, flags.max_chars);
    if (kept) filtered.push_back(std::move(*kept));
  }
  std::cout << "comments: " << raw.size() << " total, " << filtered.size()
            << " after length filter\n";

  const WordFrequencyTable freq = count_words(filtered);
  {
    std::ofstream out(dir / "freq.tsv");
    write_frequency_table(out, freq);
  }

  KeyphraseConfig kp_config;
  kp_config.alpha = flags.alpha;
  kp_config.max_per_sentence = flags.max_kp_per_sentence;
  kp_config.max_span_fraction = flags.max_span_fraction;
  if (std::isnan(flags.kp_threshold)) {
    kp_config.threshold =
        calibrate_threshold(filtered, freq, kp_config, flags.kp_density);
    std::cout << "calibrated keyphrase threshold: " << kp_config.threshold << "\n";
  } else {
    kp_config.threshold = flags.kp_threshold;
  }

  std::vector<SentenceEntry> sentences;
  sentences.reserve(filtered.size());
  std::size_t total_keyphrases = 0, total_keyphrase_words = 0;
  for (const RawComment& c : filtered) {
    SentenceEntry entry;
    entry.text = c.text;
    entry.group_key = c.group_key;
    entry.keyphrases =
        extract_keyphrases(c.text, word_tokenize(c.text), freq, kp_config);
    total_keyphrases += entry.keyphrases.size();
    for (const KeyphraseCandidate& kp : entry.keyphrases)
      total_keyphrase_words += kp.n();
    sentences.push_back(std::move(entry));
  }

  const std::vector<ClozePair> pairs =
      build_pairs(sentences, flags.seed, flags.max_span_fraction);
  auto [train, test] = split_train_test(pairs, flags.test_fraction, flags.seed);
  if (train.empty()) {
    std::cerr << "error: no training pairs produced; lower --kp-threshold or check "
                 "the corpus\n";
    return 1;
  }
  {
    std::ofstream out(dir / "pairs.train.jsonl");
    write_pairs_jsonl(out, train);
  }
  {
    std::ofstream out(dir / "pairs.test.jsonl");
    write_pairs_jsonl(out, test);
  }

  std::vector<std::string> texts;
  texts.reserve(filtered.size());
  for (const RawComment& c : filtered) texts.push_back(c.text);
  const Vocabulary vocab = train_vocab(texts, flags.vocab_size, flags.oov_buckets);
  save_vocab((dir / "vocab.txt").string(), vocab);

  const double mean_words =
      total_keyphrases == 0 ? 0.0
                            : static_cast<double>(total_keyphrase_words) /
                                  static_cast<double>(total_keyphrases);
  {
    std::ofstream out(dir / "stats.tsv");
    out << "total_comments\t" << raw.size() << "\n";
    out << "comments_filtered_by_length\t" << filtered.size() << "\n";
    out << "extracted_keyphrases\t" << total_keyphrases << "\n";
    out << "training_set_size\t" << train.size() << "\n";
    out << "test_set_size\t" << test.size() << "\n";
    out << "mean_words_per_keyphrase\t" << mean_words << "\n";
  }
  std::cout << "keyphrases: " << total_keyphrases << " (mean words " << mean_words
            << ")\npairs: " << train.size() << " train, " << test.size() << " test\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PretrainFlags {
  std::string pairs_train, pairs_test, vocab_path, out_dir;
  ModelFlags model;
  PretrainConfig config;
};

int run_pretrain(PretrainFlags& flags) {
  require_file(flags.pairs_train, "training pairs");
  require_file(flags.vocab_path, "vocabulary");
  std::vector<std::string> inputs = {flags.pairs_train, flags.vocab_path};
  if (!flags.pairs_test.empty()) {
    require_file(flags.pairs_test, "held-out pairs");
    inputs.push_back(flags.pairs_test);
  }
  const Vocabulary vocab = load_vocab(flags.vocab_path);
  const ModelConfig model_config = flags.model.to_config(vocab.size());
  write_manifest(flags.out_dir, "pretrain",
                 {{"model_config", model_config.to_json()},
                  {"batch_size", flags.config.batch_size},
                  {"negatives_per_batch", flags.config.negatives_per_batch},
                  {"learning_rate", flags.config.learning_rate},
                  {"adadelta_rho", flags.config.adadelta_rho},
                  {"aux_anneal_batches", flags.config.aux_anneal_batches},
                  {"use_aux_loss", flags.config.use_aux_loss},
                  {"max_steps", flags.config.max_steps}},
                 flags.config.seed, inputs,
                 {"encoder.ckpt", "decoder.ckpt", "metrics.csv"});

  const std::vector<ClozePair> train = read_pairs_file(flags.pairs_train);
  const std::vector<ClozePair> test =
      flags.pairs_test.empty() ? std::vector<ClozePair>{} : read_pairs_file(flags.pairs_test);

  Rng rng(flags.config.seed);
  TaggerModel<Real> model(model_config, rng);
  const fs::path dir(flags.out_dir);
  const PretrainResult result = pretrain(model, vocab, train, test, flags.config,
                                         (dir / "metrics.csv").string());

  nlohmann::json meta = {{"model_config", model_config.to_json()},
                         {"vocab_file", flags.vocab_path}};
  save_checkpoint((dir / "encoder.ckpt").string(), model.encoder_parameters(), meta);
  meta["has_residual_layer"] = model.has_residual_layer();
  save_checkpoint((dir / "decoder.ckpt").string(), model.decoder_parameters(), meta);
  std::cout << "pretrained " << result.steps_run << " steps, final loss "
            << result.final_loss << ", held-out precision " << result.final_eval.precision
            << " recall " << result.final_eval.recall << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FinetuneCliFlags {
  std::string encoder_path, decoder_path, vocab_path, train_path, slot, out_dir;
  FinetuneFlags finetune;
};

int run_finetune(FinetuneCliFlags& flags) {
  require_file(flags.encoder_path, "encoder checkpoint");
  require_file(flags.decoder_path, "decoder checkpoint");
  require_file(flags.vocab_path, "vocabulary");
  require_file(flags.train_path, "labeled training data");
  write_manifest(flags.out_dir, "finetune",
                 {{"slot", flags.slot},
                  {"steps", flags.finetune.config.steps},
                  {"batch_size", flags.finetune.config.batch_size},
                  {"value_fraction", flags.finetune.config.value_fraction},
                  {"use_extra_features", flags.finetune.config.use_extra_features}},
                 flags.finetune.config.seed,
                 {flags.encoder_path, flags.decoder_path, flags.vocab_path,
                  flags.train_path},
                 {"decoder." + flags.slot + ".ckpt", "metrics.csv"});

  const Vocabulary vocab = load_vocab(flags.vocab_path);
  TaggerModel<Real> model =
      load_model(flags.encoder_path, flags.decoder_path, /*with_residual=*/false);

  std::vector<LabeledExample> train = read_labeled_file(flags.train_path);
  if (!flags.slot.empty()) {
    std::erase_if(train, [&](const LabeledExample& e) { return e.slot != flags.slot; });
  }
  const fs::path dir(flags.out_dir);
  const FinetuneResult result = finetune(model, vocab, train, flags.finetune.config,
                                         (dir / "metrics.csv").string());

  nlohmann::json meta = load_checkpoint_meta(flags.encoder_path);
  meta["has_residual_layer"] = model.has_residual_layer();
  meta["slot"] = flags.slot;
  save_checkpoint((dir / ("decoder." + flags.slot + ".ckpt")).string(),
                  model.decoder_parameters(), meta);
  std::cout << "fine-tuned slot '" << flags.slot << "' for " << result.steps_run
            << " steps (loss EMA " << result.final_loss_ema
            << (result.early_stopped ? ", early stop" : "") << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateFlags {
  std::string encoder_path, vocab_path, test_path, train_path, pretrained_decoder;
  std::vector<std::string> decoder_specs;  // slot=path
  std::string fractions;
  std::string out_dir;
  bool probe = false;
  bool episodic = false;
  std::size_t ensemble = 1;
  std::size_t episodes_per_domain = 3;
  std::size_t shots = 5;
  std::size_t decoders_per_slot = 3;
  FinetuneFlags finetune;
  std::uint64_t seed = 1;
};

double parse_fraction(const std::string& text) {
  const std::size_t slash = text.find('/');
  if (slash == std::string::npos) return std::stod(text);
  return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
}

void print_report(const EvalReport& report, std::ostream& out) {
  out << "slot              precision  recall     f1\n";
  for (const auto& [slot, m] : report.per_slot) {
    out << slot;
    for (std::size_t i = slot.size(); i < 18; ++i) out << ' ';
    char line[64];
    std::snprintf(line, sizeof(line), "%-10.4f %-10.4f %-10.4f", m.precision, m.recall,
                  m.f1);
    out << line << "\n";
  }
  out << "macro F1 " << report.macro_f1 << "  micro F1 " << report.micro_f1
      << "  invalid decodes " << report.invalid_decodes << "\n";
}

int run_evaluate(EvaluateFlags& flags) {
  require_file(flags.encoder_path, "encoder checkpoint");
  require_file(flags.vocab_path, "vocabulary");
  require_file(flags.test_path, "test data");
  const Vocabulary vocab = load_vocab(flags.vocab_path);
  const std::vector<LabeledExample> test = read_labeled_file(flags.test_path);
  fs::create_directories(flags.out_dir);
  const fs::path dir(flags.out_dir);

  write_manifest(flags.out_dir, "evaluate",
                 {{"probe", flags.probe},
                  {"episodic", flags.episodic},
                  {"fractions", flags.fractions},
                  {"ensemble", flags.ensemble}},
                 flags.seed, {flags.encoder_path, flags.vocab_path, flags.test_path},
                 {"report.csv"});

  // --- probe: pretrained model, no fine-tuning
  if (flags.probe) {
    require_file(flags.pretrained_decoder, "pretrained decoder checkpoint");
    TaggerModel<Real> model =
        load_model(flags.encoder_path, flags.pretrained_decoder, false);
    std::vector<std::string> utterances;
    std::set<std::string> seen;
    for (const LabeledExample& e : test)
      if (seen.insert(e.text).second) utterances.push_back(e.text);
    const ProbeReport report = probe_without_finetuning(model, vocab, utterances, &test);
    std::ofstream csv(dir / "report.csv");
    csv << "utterances,predicted_fraction,label_match_fraction\n";
    csv << utterances.size() << ',' << report.fraction_predicted << ','
        << report.fraction_matching_label << "\n";
    std::cout << "probe: predicted a value for " << report.fraction_predicted * 100.0
              << "% of " << utterances.size() << " utterances; "
              << report.fraction_matching_label * 100.0
              << "% of those match a labeled span\n";
    return 0;
  }

  // --- episodic few-shot evaluation over domains
  if (flags.episodic) {
    require_file(flags.pretrained_decoder, "pretrained decoder checkpoint");
    std::map<std::string, std::vector<LabeledExample>> domains;
    for (const LabeledExample& e : test)
      domains[e.domain.empty() ? "default" : e.domain].push_back(e);

    TaggerModel<Real> base =
        load_model(flags.encoder_path, flags.pretrained_decoder, false);
    EpisodicConfig config;
    config.shots = flags.shots;
    config.decoders_per_slot = flags.decoders_per_slot;
    config.episodes_per_domain = flags.episodes_per_domain;
    config.seed = flags.seed;
    config.further_pretrain = flags.finetune.config;
    config.episode_finetune = flags.finetune.config;
    const auto results = episodic_eval<Real>(
        domains, base.config(), base.encoder_parameters(), base.decoder_parameters(),
        vocab, config);
    std::ofstream csv(dir / "report.csv");
    csv << "domain,mean_macro_f1,episodes\n";
    for (const auto& r : results) {
      csv << r.domain << ',' << r.mean_macro_f1 << ',' << r.episode_f1.size() << "\n";
      std::cout << "domain " << r.domain << ": mean macro F1 " << r.mean_macro_f1
                << " over " << r.episode_f1.size() << " episodes\n";
    }
    return 0;
  }

  // --- fractions: subsample the training set, fine-tune per slot, evaluate
  if (!flags.fractions.empty()) {
    require_file(flags.train_path, "labeled training data");
    require_file(flags.pretrained_decoder, "pretrained decoder checkpoint");
    const std::vector<LabeledExample> train = read_labeled_file(flags.train_path);
    std::set<std::string> slots;
    for (const LabeledExample& e : train) slots.insert(e.slot);

    std::ofstream csv(dir / "report.csv");
    csv << "fraction,train_size,slot,precision,recall,f1,macro_f1\n";
    std::vector<std::string> fraction_items;
    {
      std::stringstream ss(flags.fractions);
      std::string item;
      while (std::getline(ss, item, ',')) fraction_items.push_back(item);
    }
    for (const std::string& item : fraction_items) {
      const double fraction = parse_fraction(item);
      const std::vector<LabeledExample> subset =
          subsample_training(train, fraction, flags.seed);
      std::vector<Prediction> predictions;
      std::vector<LabeledExample> gold;
      std::map<std::string, SlotMetrics> slot_rows;
      for (const std::string& slot : slots) {
        std::vector<LabeledExample> slot_train, slot_test;
        for (const LabeledExample& e : subset)
          if (e.slot == slot) slot_train.push_back(e);
        for (const LabeledExample& e : test)
          if (e.slot == slot) slot_test.push_back(e);
        if (slot_test.empty()) continue;

        std::vector<std::unique_ptr<TaggerModel<Real>>> decoders;
        std::vector<const TaggerModel<Real>*> ptrs;
        for (std::size_t d = 0; d < flags.ensemble; ++d) {
          auto model = std::make_unique<TaggerModel<Real>>(
              load_model(flags.encoder_path, flags.pretrained_decoder, false,
                         splitmix64_once(flags.seed + d)));
          FinetuneConfig ft = flags.finetune.config;
          ft.seed = splitmix64_once(flags.seed ^ (0xF1 + d) ^ fnv1a64(slot));
          finetune(*model, vocab, slot_train, ft);
          ptrs.push_back(model.get());
          decoders.push_back(std::move(model));
        }
        std::vector<Prediction> slot_preds = predict_dataset(
            ptrs, vocab, slot_test, flags.finetune.config.use_extra_features);
        predictions.insert(predictions.end(), slot_preds.begin(), slot_preds.end());
        gold.insert(gold.end(), slot_test.begin(), slot_test.end());
      }
      const EvalReport report = span_f1(predictions, gold);
      for (const auto& [slot, m] : report.per_slot)
        csv << item << ',' << subset.size() << ',' << slot << ',' << m.precision << ','
            << m.recall << ',' << m.f1 << ',' << report.macro_f1 << "\n";
      std::cout << "fraction " << item << " (" << subset.size() << " examples): macro F1 "
                << report.macro_f1 << "\n";
    }
    return 0;
  }

  // --- direct evaluation with provided per-slot decoders
  if (flags.decoder_specs.empty())
    throw std::runtime_error("evaluate: pass --decoder slot=path (repeatable), "
                             "--fractions, --probe, or --episodic");
  std::vector<Prediction> predictions;
  std::vector<LabeledExample> gold;
  std::size_t invalid = 0;
  for (const std::string& spec : flags.decoder_specs) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("evaluate: --decoder expects slot=path, got " + spec);
    const std::string slot = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    require_file(path, "decoder checkpoint for slot " + slot);
    const bool residual = decoder_has_residual(path);
    TaggerModel<Real> model = load_model(flags.encoder_path, path, residual);
    std::vector<LabeledExample> slot_test;
    for (const LabeledExample& e : test)
      if (e.slot == slot) slot_test.push_back(e);
    std::vector<const TaggerModel<Real>*> ptrs = {&model};
    std::vector<Prediction> slot_preds =
        predict_dataset(ptrs, vocab, slot_test, residual, 5, &invalid);
    predictions.insert(predictions.end(), slot_preds.begin(), slot_preds.end());
    gold.insert(gold.end(), slot_test.begin(), slot_test.end());
  }
  EvalReport report = span_f1(predictions, gold);
  report.invalid_decodes = invalid;
  std::ofstream csv(dir / "report.csv");
  csv << "slot,precision,recall,f1\n";
  for (const auto& [slot, m] : report.per_slot)
    csv << slot << ',' << m.precision << ',' << m.recall << ',' << m.f1 << "\n";
  csv << "macro,,," << report.macro_f1 << "\n";
  csv << "micro,,," << report.micro_f1 << "\n";
  print_report(report, std::cout);
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictFlags {
  std::string encoder_path, decoder_path, vocab_path;
  bool requested = false;
};

int run_predict(const PredictFlags& flags) {
  require_file(flags.encoder_path, "encoder checkpoint");
  require_file(flags.decoder_path, "decoder checkpoint");
  require_file(flags.vocab_path, "vocabulary");
  const Vocabulary vocab = load_vocab(flags.vocab_path);
  const bool residual = decoder_has_residual(flags.decoder_path);
  TaggerModel<Real> model = load_model(flags.encoder_path, flags.decoder_path, residual);

  std::string line;
  while (std::getline(std::cin, line)) {
    if (utf8::trim(line).empty()) {
      std::cout << "NONE\t1\n";
      continue;
    }
    const SpanPrediction p =
        predict_span(model, vocab, line, flags.requested, residual);
    if (p.span)
      std::cout << p.span->begin << ":" << p.span->end << "\t"
                << line.substr(p.span->begin, p.span->size()) << "\t" << p.probability
                << "\n";
    else
      std::cout << "NONE\t" << p.probability << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairwise-cloze pretraining and slot-value extraction pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a key=value config file");

  // gen-synthetic
  auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic corpus and slot data");
  std::string gen_out;
  synth::SyntheticConfig gen_config;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--sentences", gen_config.corpus_sentences, "Corpus sentences");
  gen->add_option("--train-positives", gen_config.train_positives_per_slot,
                  "Positive training examples per slot");
  gen->add_option("--train-negatives", gen_config.train_negatives_per_slot,
                  "No-value training examples per slot");
  gen->add_option("--test-positives", gen_config.test_positives_per_slot,
                  "Positive test examples per slot");
  gen->add_option("--test-negatives", gen_config.test_negatives_per_slot,
                  "No-value test examples per slot");
  gen->add_option("--seed", gen_config.seed, "Random seed");

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data", "Build cloze pairs from a raw corpus");
  PrepareFlags prep_flags;
  prep->add_option("--corpus", prep_flags.corpus_path, "Line-oriented corpus file")
      ->required();
  prep->add_option("--out", prep_flags.out_dir, "Output directory")->required();
  prep->add_option("--min-chars", prep_flags.min_chars, "Length filter lower bound");
  prep->add_option("--max-chars", prep_flags.max_chars, "Length filter upper bound");
  prep->add_option("--alpha", prep_flags.alpha, "Keyphrase length factor");
  prep->add_option("--kp-threshold", prep_flags.kp_threshold,
                   "Keyphrase score threshold (calibrated from --kp-density if unset)");
  prep->add_option("--kp-density", prep_flags.kp_density,
                   "Target keyphrases per sentence for threshold calibration");
  prep->add_option("--max-kp-per-sentence", prep_flags.max_kp_per_sentence,
                   "Keyphrases kept per sentence");
  prep->add_option("--max-span-fraction", prep_flags.max_span_fraction,
                   "Maximum keyphrase share of the sentence");
  prep->add_option("--test-fraction", prep_flags.test_fraction, "Held-out pair share");
  prep->add_option("--vocab-size", prep_flags.vocab_size, "Subword vocabulary size");
  prep->add_option("--oov-buckets", prep_flags.oov_buckets, "OOV hash buckets");
  prep->add_option("--seed", prep_flags.seed, "Random seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pretrain on cloze pairs");
  PretrainFlags pre_flags;
  pre->add_option("--pairs-train", pre_flags.pairs_train, "Training pairs JSONL")
      ->required();
  pre->add_option("--pairs-test", pre_flags.pairs_test, "Held-out pairs JSONL");
  pre->add_option("--vocab", pre_flags.vocab_path, "Vocabulary file")->required();
  pre->add_option("--out", pre_flags.out_dir, "Output directory")->required();
  pre_flags.model.attach(pre);
  pre->add_option("--batch-size", pre_flags.config.batch_size, "Batch size");
  pre->add_option("--negatives-per-batch", pre_flags.config.negatives_per_batch,
                  "Random negatives per batch");
  pre->add_option("--learning-rate", pre_flags.config.learning_rate, "Adadelta rate");
  pre->add_option("--adadelta-rho", pre_flags.config.adadelta_rho, "Adadelta rho");
  pre->add_option("--aux-anneal-batches", pre_flags.config.aux_anneal_batches,
                  "Batches to anneal C to sqrt(d)");
  pre->add_flag("--no-aux-loss",
                [&](std::size_t) { pre_flags.config.use_aux_loss = false; },
                "Disable the contrastive BOS loss");
  pre->add_option("--max-steps", pre_flags.config.max_steps, "Training steps");
  pre->add_option("--eval-every", pre_flags.config.eval_every, "Held-out eval period");
  pre->add_option("--target-precision", pre_flags.config.target_eval_precision,
                  "Stop once held-out precision and recall reach the targets");
  pre->add_option("--target-recall", pre_flags.config.target_eval_recall,
                  "Stop once held-out precision and recall reach the targets");
  pre->add_option("--seed", pre_flags.config.seed, "Random seed");

  // finetune
  auto* fine = app.add_subcommand("finetune", "Fine-tune a per-slot decoder");
  FinetuneCliFlags fine_flags;
  fine->add_option("--encoder", fine_flags.encoder_path, "Encoder checkpoint")
      ->required();
  fine->add_option("--decoder", fine_flags.decoder_path, "Pretrained decoder checkpoint")
      ->required();
  fine->add_option("--vocab", fine_flags.vocab_path, "Vocabulary file")->required();
  fine->add_option("--train", fine_flags.train_path, "Labeled training JSONL")
      ->required();
  fine->add_option("--slot", fine_flags.slot, "Slot name to train")->required();
  fine->add_option("--out", fine_flags.out_dir, "Output directory")->required();
  fine_flags.finetune.attach(fine);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score span-exact-match F1");
  EvaluateFlags eval_flags;
  eval->add_option("--encoder", eval_flags.encoder_path, "Encoder checkpoint")
      ->required();
  eval->add_option("--vocab", eval_flags.vocab_path, "Vocabulary file")->required();
  eval->add_option("--test", eval_flags.test_path, "Labeled test JSONL")->required();
  eval->add_option("--train", eval_flags.train_path, "Labeled training JSONL");
  eval->add_option("--pretrained-decoder", eval_flags.pretrained_decoder,
                   "Pretrained decoder checkpoint (fractions/probe/episodic)");
  eval->add_option("--decoder", eval_flags.decoder_specs,
                   "Per-slot decoder checkpoint as slot=path (repeatable)");
  eval->add_option("--fractions", eval_flags.fractions,
                   "Comma-separated training fractions, e.g. 1,1/16,1/128");
  eval->add_option("--out", eval_flags.out_dir, "Output directory")->required();
  eval->add_flag("--probe", eval_flags.probe, "No-fine-tuning probe");
  eval->add_flag("--episodic", eval_flags.episodic, "Leave-one-domain-out episodes");
  eval->add_option("--ensemble", eval_flags.ensemble, "Decoders per slot (fractions)");
  eval->add_option("--episodes-per-domain", eval_flags.episodes_per_domain,
                   "Episodes per held-out domain");
  eval->add_option("--shots", eval_flags.shots, "Support examples per episode");
  eval->add_option("--decoders-per-slot", eval_flags.decoders_per_slot,
                   "Ensemble size per slot in episodic mode");
  eval_flags.finetune.attach(eval);
  eval->add_option("--eval-seed", eval_flags.seed, "Evaluation seed");

  // predict
  auto* pred = app.add_subcommand("predict", "Predict spans for stdin utterances");
  PredictFlags pred_flags;
  pred->add_option("--encoder", pred_flags.encoder_path, "Encoder checkpoint")
      ->required();
  pred->add_option("--decoder", pred_flags.decoder_path, "Decoder checkpoint")
      ->required();
  pred->add_option("--vocab", pred_flags.vocab_path, "Vocabulary file")->required();
  pred->add_flag("--requested", pred_flags.requested,
                 "Mark utterances as slot-requested");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_synthetic(gen_out, gen_config);
    if (prep->parsed()) return run_prepare_data(prep_flags);
    if (pre->parsed()) return run_pretrain(pre_flags);
    if (fine->parsed()) return run_finetune(fine_flags);
    if (eval->parsed()) return run_evaluate(eval_flags);
    if (pred->parsed()) return run_predict(pred_flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
