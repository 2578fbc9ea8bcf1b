#pragma once

// The sequence tagger: a shared transformer encoder over template and input
// sentences, separate projection FFNs for the two streams, a two-block
// decoder (self-attention plus attention over the projected template), and a
// linear head emitting per-step CRF potentials. The BOS vectors of the two
// projected streams serve as sentence summaries for the contrastive loss.
//
// Checkpoints split into `encoder.*` and `decoder.*` namespaces; fine-tuning
// trains only the decoder namespace.

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clozespan/crf.hpp"
#include "clozespan/nn.hpp"
#include "clozespan/subword.hpp"
#include "clozespan/tensor.hpp"

namespace clozespan {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 64;
  std::size_t encoder_layers = 2;
  std::size_t encoder_dim = 128;
  std::size_t encoder_ffn_dim = 256;
  std::size_t proj_dim = 32;
  std::size_t decoder_blocks = 2;
  std::size_t decoder_ffn_dim = 64;
  std::size_t decoder_attention_projection_dim = 16;  // per-head width
  std::size_t num_heads = 2;
  std::size_t residual_hidden_dim = 128;
  std::size_t aux_d = 0;  // annealing dimension d; 0 means proj_dim
  double dropout_rate = 0.0;

  std::size_t aux_dim() const { return aux_d ? aux_d : proj_dim; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"vocab_size", vocab_size},
                          {"max_seq_len", max_seq_len},
                          {"encoder_layers", encoder_layers},
                          {"encoder_dim", encoder_dim},
                          {"encoder_ffn_dim", encoder_ffn_dim},
                          {"proj_dim", proj_dim},
                          {"decoder_blocks", decoder_blocks},
                          {"decoder_ffn_dim", decoder_ffn_dim},
                          {"decoder_attention_projection_dim",
                           decoder_attention_projection_dim},
                          {"num_heads", num_heads},
                          {"residual_hidden_dim", residual_hidden_dim},
                          {"aux_d", aux_d},
                          {"dropout_rate", dropout_rate}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
    c.encoder_dim = j.at("encoder_dim").get<std::size_t>();
    c.encoder_ffn_dim = j.at("encoder_ffn_dim").get<std::size_t>();
    c.proj_dim = j.at("proj_dim").get<std::size_t>();
    c.decoder_blocks = j.at("decoder_blocks").get<std::size_t>();
    c.decoder_ffn_dim = j.at("decoder_ffn_dim").get<std::size_t>();
    c.decoder_attention_projection_dim =
        j.at("decoder_attention_projection_dim").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.residual_hidden_dim = j.at("residual_hidden_dim").get<std::size_t>();
    c.aux_d = j.at("aux_d").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    return c;
  }

  void validate() const {
    if (vocab_size == 0) throw std::invalid_argument("ModelConfig: vocab_size unset");
    if (proj_dim > encoder_dim)
      throw std::invalid_argument("ModelConfig: proj_dim must be <= encoder_dim");
    if (encoder_dim % num_heads != 0)
      throw std::invalid_argument("ModelConfig: encoder_dim not divisible by num_heads");
  }
};

// Per-example side information for fine-tuning domains that need it.
struct ExtraFeatures {
  bool is_requested = false;
  std::vector<bool> token_is_numeric;  // aligned with input tokens (incl. BOS/EOS)
};

inline ExtraFeatures make_extra_features(const TokenizedText& tokens, bool is_requested) {
  ExtraFeatures f;
  f.is_requested = is_requested;
  f.token_is_numeric.reserve(tokens.size());
  for (const CharSpan& span : tokens.offsets) {
    bool numeric = false;
    for (std::size_t i = span.begin; i < span.end; ++i)
      if (tokens.text[i] >= '0' && tokens.text[i] <= '9') {
        numeric = true;
        break;
      }
    f.token_is_numeric.push_back(numeric);
  }
  return f;
}

enum class Phase { kPretrain, kFinetune };

template <typename Real>
class TaggerModel {
 public:
  static constexpr std::size_t kFeatureDim = 2;  // is_requested, token_is_numeric

  TaggerModel(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    token_embedding_ = init_embedding(rng, config_.vocab_size, config_.encoder_dim);
    position_embedding_ = init_embedding(rng, config_.max_seq_len, config_.encoder_dim);
    for (std::size_t i = 0; i < config_.encoder_layers; ++i)
      encoder_blocks_.emplace_back(rng, config_.encoder_dim, config_.encoder_ffn_dim,
                                   config_.num_heads);
    final_norm_ = nn::LayerNorm<Real>(config_.encoder_dim);
    template_proj_ = nn::ProjectionFfn<Real>(rng, config_.encoder_dim,
                                             config_.encoder_dim, config_.proj_dim);
    input_proj_ = nn::ProjectionFfn<Real>(rng, config_.encoder_dim, config_.encoder_dim,
                                          config_.proj_dim);
    for (std::size_t i = 0; i < config_.decoder_blocks; ++i)
      decoder_blocks_.emplace_back(rng, config_.proj_dim, config_.decoder_ffn_dim,
                                   config_.num_heads,
                                   config_.decoder_attention_projection_dim);
    crf_head_ = nn::Linear<Real>(rng, config_.proj_dim, kPotentialsPerStep,
                                 /*zero_init=*/true);
  }

  const ModelConfig& config() const { return config_; }

  // Adds the residual feature layer (fresh, zero output at initialization).
  // Must be called before fine-tuning with extra features and before loading
  // a checkpoint that contains residual parameters.
  void enable_residual_layer(Rng& rng) {
    if (!residual_)
      residual_ = std::make_unique<nn::ResidualFeatureLayer<Real>>(
          rng, config_.encoder_dim, kFeatureDim, config_.residual_hidden_dim);
  }
  bool has_residual_layer() const { return residual_ != nullptr; }

  Tensor<Real> encode(const TokenizedText& tokens) const {
    if (tokens.size() > config_.max_seq_len)
      throw std::invalid_argument("encode: sequence of " +
                                  std::to_string(tokens.size()) +
                                  " tokens exceeds max_seq_len " +
                                  std::to_string(config_.max_seq_len));
    if (tokens.size() == 0) throw std::invalid_argument("encode: empty sequence");
    Tensor<Real> x = embedding_lookup(token_embedding_, tokens.ids);
    x = add(x, slice_rows(position_embedding_, 0, tokens.size()));
    for (const auto& block : encoder_blocks_) x = block(x);
    return final_norm_(x);
  }

  struct DecodeResult {
    Tensor<Real> potentials;  // (T_input, 20)
    Tensor<Real> f_template;  // (proj_dim)
    Tensor<Real> f_input;     // (proj_dim)
  };

  // When template and input are the same token sequence the encoder runs
  // once and one dropout mask is shared by both streams.
  DecodeResult decode(const TokenizedText& template_tokens,
                      const TokenizedText& input_tokens,
                      const ExtraFeatures* extra = nullptr, bool training = false,
                      double encoder_output_dropout = 0.0, Rng* rng = nullptr) const {
    if (training && encoder_output_dropout > 0.0 && rng == nullptr)
      throw std::invalid_argument("decode: dropout requires an rng");

    const bool shared = template_tokens.ids == input_tokens.ids &&
                        template_tokens.text == input_tokens.text;
    Tensor<Real> enc_t = encode(template_tokens);
    Tensor<Real> enc_i = shared ? enc_t : encode(input_tokens);
    if (training && encoder_output_dropout > 0.0) {
      enc_t = dropout(enc_t, encoder_output_dropout, training, *rng);
      enc_i = shared ? enc_t : dropout(enc_i, encoder_output_dropout, training, *rng);
    }

    if (extra) {
      if (!residual_)
        throw std::invalid_argument(
            "decode: extra features given but the residual layer is not enabled");
      if (extra->token_is_numeric.size() != input_tokens.size())
        throw std::invalid_argument("decode: feature length mismatch");
      std::vector<Real> feats(input_tokens.size() * kFeatureDim);
      for (std::size_t t = 0; t < input_tokens.size(); ++t) {
        feats[t * kFeatureDim] = extra->is_requested ? Real(1) : Real(0);
        feats[t * kFeatureDim + 1] = extra->token_is_numeric[t] ? Real(1) : Real(0);
      }
      Tensor<Real> features =
          Tensor<Real>::from(Shape{input_tokens.size(), kFeatureDim}, std::move(feats));
      enc_i = (*residual_)(enc_i, features);
      if (shared) enc_t = enc_i;
    }

    Tensor<Real> proj_t = template_proj_(enc_t);
    Tensor<Real> proj_i = input_proj_(enc_i);

    DecodeResult result;
    result.f_template = reshape(slice_rows(proj_t, 0, 1), Shape{config_.proj_dim});
    result.f_input = reshape(slice_rows(proj_i, 0, 1), Shape{config_.proj_dim});

    Tensor<Real> x = proj_i;
    for (const auto& block : decoder_blocks_) x = block(x, proj_t);
    result.potentials = crf_head_(x);
    return result;
  }

  NamedParams<Real> encoder_parameters() const {
    NamedParams<Real> out;
    out.emplace_back("encoder.token_embedding", token_embedding_);
    out.emplace_back("encoder.position_embedding", position_embedding_);
    for (std::size_t i = 0; i < encoder_blocks_.size(); ++i)
      encoder_blocks_[i].collect("encoder.block" + std::to_string(i), out);
    final_norm_.collect("encoder.final_norm", out);
    return out;
  }

  NamedParams<Real> decoder_parameters() const {
    NamedParams<Real> out;
    template_proj_.collect("decoder.template_proj", out);
    input_proj_.collect("decoder.input_proj", out);
    for (std::size_t i = 0; i < decoder_blocks_.size(); ++i)
      decoder_blocks_[i].collect("decoder.block" + std::to_string(i), out);
    crf_head_.collect("decoder.crf_head", out);
    if (residual_) residual_->collect("decoder.residual", out);
    return out;
  }

  NamedParams<Real> named_parameters() const {
    NamedParams<Real> out = encoder_parameters();
    NamedParams<Real> dec = decoder_parameters();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
  }

  // Pretraining updates everything; fine-tuning only the decoder namespace.
  NamedParams<Real> trainable_parameters(Phase phase) const {
    return phase == Phase::kPretrain ? named_parameters() : decoder_parameters();
  }

 private:
  static Tensor<Real> init_embedding(Rng& rng, std::size_t rows, std::size_t dim) {
    std::vector<Real> v(rows * dim);
    for (Real& x : v) x = static_cast<Real>(rng.next_normal() * 0.02);
    return Tensor<Real>::from(Shape{rows, dim}, std::move(v), true);
  }

  ModelConfig config_;
  Tensor<Real> token_embedding_, position_embedding_;
  std::vector<nn::EncoderBlock<Real>> encoder_blocks_;
  nn::LayerNorm<Real> final_norm_;
  nn::ProjectionFfn<Real> template_proj_, input_proj_;
  std::vector<nn::DecoderBlock<Real>> decoder_blocks_;
  nn::Linear<Real> crf_head_;
  std::unique_ptr<nn::ResidualFeatureLayer<Real>> residual_;
};

}  // namespace clozespan
