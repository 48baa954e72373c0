#pragma once

// The trainable bundle: shared encoder, pooling choice, combination kind,
// link head, reconstruction decoder head, and the vocabulary it was built
// with. Non-movable because the parameter registry holds pointers into the
// member parameters.

#include <memory>
#include <random>
#include <string>

#include "v2w/checkpoint.hpp"
#include "v2w/encoder.hpp"
#include "v2w/link_predictor.hpp"
#include "v2w/reconstruction_decoder.hpp"
#include "v2w/tokenizer.hpp"

namespace v2w {

class V2wModel {
 public:
  EncoderModel encoder;
  Pooling pooling = Pooling::kMean;
  LinkHead link_head;
  DecoderHead decoder;
  Vocabulary vocab;
  ParamSet params;

  V2wModel(const EncoderConfig& cfg, Pooling pooling_kind, Combination combination,
           Vocabulary vocabulary)
      : encoder(cfg), pooling(pooling_kind), vocab(std::move(vocabulary)) {
    if (vocab.size() != cfg.vocab_size)
      throw Error("model: vocabulary size " + std::to_string(vocab.size()) +
                  " does not match config " + std::to_string(cfg.vocab_size));
    link_head.kind = combination;
    encoder.register_params(params);
    link_head.register_params(params);
    decoder.register_params(params);
  }

  V2wModel(const V2wModel&) = delete;
  V2wModel& operator=(const V2wModel&) = delete;

  void init(std::uint64_t seed) {
    auto rng = make_rng(derive_seed(seed, "init"));
    encoder.init(rng);
    link_head.init(encoder.cfg.hidden, rng);
    decoder.init(encoder.cfg.hidden, encoder.cfg.vocab_size, rng);
    encoder.set_trainable(encoder.cfg.frozen_layers);
  }

  const EncoderConfig& config() const { return encoder.cfg; }

  Checkpoint to_checkpoint() const {
    Checkpoint ckpt;
    const EncoderConfig& c = encoder.cfg;
    ckpt.config = {
        {"format_version", 1},
        {"model_kind", "encoder_link"},
        {"encoder",
         {{"layers", c.layers},
          {"hidden", c.hidden},
          {"heads", c.heads},
          {"seq_len", c.seq_len},
          {"vocab_size", c.vocab_size},
          {"frozen_layers", c.frozen_layers},
          {"ffn_mult", c.ffn_mult},
          {"dropout", c.dropout}}},
        {"pooling", to_string(pooling)},
        {"combination", to_string(link_head.kind)},
        {"pooler_activation", "tanh"},
        {"vocab", vocab.tokens()},
    };
    for (const Param* p : params.all()) ckpt.tensors.emplace_back(p->name, p->value);
    return ckpt;
  }

  void save(const std::string& path) const { save_checkpoint(path, to_checkpoint()); }

  static std::unique_ptr<V2wModel> from_checkpoint(const Checkpoint& ckpt) {
    if (ckpt.config.value("model_kind", "") != "encoder_link")
      throw Error("model: checkpoint kind is not encoder_link");
    EncoderConfig cfg;
    std::unique_ptr<V2wModel> model;
    try {
      const auto& e = ckpt.config.at("encoder");
      cfg.layers = e.at("layers").get<int>();
      cfg.hidden = e.at("hidden").get<int>();
      cfg.heads = e.at("heads").get<int>();
      cfg.seq_len = e.at("seq_len").get<int>();
      cfg.vocab_size = e.at("vocab_size").get<int>();
      cfg.frozen_layers = e.at("frozen_layers").get<int>();
      cfg.ffn_mult = e.at("ffn_mult").get<int>();
      cfg.dropout = e.at("dropout").get<double>();
      Vocabulary vocab =
          Vocabulary::from_tokens(ckpt.config.at("vocab").get<std::vector<std::string>>());
      model = std::make_unique<V2wModel>(
          cfg, pooling_from_string(ckpt.config.at("pooling").get<std::string>()),
          combination_from_string(ckpt.config.at("combination").get<std::string>()),
          std::move(vocab));
    } catch (const nlohmann::json::exception& e) {
      throw Error(std::string("model: malformed checkpoint config: ") + e.what());
    }
    for (Param* p : model->params.all()) {
      const Mat& t = ckpt.tensor(p->name);
      p->value = t;
    }
    model->encoder.set_trainable(cfg.frozen_layers);
    return model;
  }

  static std::unique_ptr<V2wModel> load(const std::string& path) {
    return from_checkpoint(load_checkpoint(path));
  }
};

}  // namespace v2w
