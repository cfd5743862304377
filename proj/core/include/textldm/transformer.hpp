#ifndef TEXTLDM_TRANSFORMER_HPP
#define TEXTLDM_TRANSFORMER_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textldm/params.hpp"
#include "textldm/tensor.hpp"

namespace tldm {

struct TransformerConfig {
  int layers = 4;
  int model_dim = 128;
  int heads = 4;
  int ffn_multiplier = 4;
  double rope_base = 10000.0;
  int max_positions = 512;
  bool use_rope = true;

  int head_dim() const { return model_dim / heads; }
  /// Throws std::invalid_argument on an inconsistent configuration
  /// (model_dim not divisible by heads, odd head_dim).
  void validate() const;
};

struct TransformerLayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

/// Shared pre-norm backbone over [rows, model_dim] inputs. Embeddings and
/// input/output projections belong to the owning model.
struct TransformerState {
  TransformerConfig config;
  std::vector<TransformerLayerParams> layers;
  Tensor final_ln_gain, final_ln_bias;
};

TransformerState make_transformer(const TransformerConfig& config, Rng& init_rng,
                                  ParamRegistry& registry, const std::string& prefix);

/// Optional per-layer modulation applied right after each pre-norm:
/// h <- h * (1 + scale) + shift, with scale/shift of shape [model_dim].
struct LayerModulation {
  Tensor scale;
  Tensor shift;
};

struct TransformerOutput {
  /// Post-residual output of each block, in order.
  std::vector<Tensor> layer_outputs;
  /// Final block output passed through the last LayerNorm.
  Tensor final_output;
};

/// Bidirectional forward pass. `attn_mask`, when defined, is an additive
/// [rows, rows] tensor (0 for visible, a large negative value for masked).
/// `positions` defaults to 0..rows-1.
TransformerOutput transformer_forward(const TransformerState& state, const Tensor& input,
                                      const Tensor& attn_mask = {},
                                      std::span<const std::int32_t> positions = {},
                                      std::span<const LayerModulation> modulation = {});

/// softmax(q k^T / sqrt(head_dim) + mask) v over [heads, rows, head_dim].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& mask = {});

/// Additive attention mask that hides key columns where keep[j] == 0.
Tensor make_pad_mask(std::span<const std::uint8_t> keep);

/// x W + b with b broadcast across rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace tldm

#endif  // TEXTLDM_TRANSFORMER_HPP
