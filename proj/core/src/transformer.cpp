#include "textldm/transformer.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tldm {

namespace {
constexpr float kMaskValue = -1e30f;
}

void TransformerConfig::validate() const {
  if (layers < 0) throw std::invalid_argument("transformer: layers must be >= 0");
  if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0) {
    throw std::invalid_argument("transformer: model_dim " + std::to_string(model_dim) +
                                " must be a positive multiple of heads " + std::to_string(heads));
  }
  if (use_rope && head_dim() % 2 != 0) {
    throw std::invalid_argument("transformer: head_dim " + std::to_string(head_dim()) +
                                " must be even for rotary pairing");
  }
  if (ffn_multiplier <= 0) throw std::invalid_argument("transformer: ffn_multiplier must be > 0");
  if (max_positions <= 0) throw std::invalid_argument("transformer: max_positions must be > 0");
}

TransformerState make_transformer(const TransformerConfig& config, Rng& init_rng,
                                  ParamRegistry& registry, const std::string& prefix) {
  config.validate();
  TransformerState st;
  st.config = config;
  const std::int64_t d = config.model_dim;
  const std::int64_t f = d * config.ffn_multiplier;
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l) + ".";
    TransformerLayerParams lp;
    lp.ln1_gain = registry.add(p + "ln1.gain", Tensor::ones({d}));
    lp.ln1_bias = registry.add(p + "ln1.bias", Tensor::zeros({d}));
    lp.wq = registry.add(p + "attn.wq", normal_init({d, d}, init_rng));
    lp.bq = registry.add(p + "attn.bq", Tensor::zeros({d}));
    lp.wk = registry.add(p + "attn.wk", normal_init({d, d}, init_rng));
    lp.bk = registry.add(p + "attn.bk", Tensor::zeros({d}));
    lp.wv = registry.add(p + "attn.wv", normal_init({d, d}, init_rng));
    lp.bv = registry.add(p + "attn.bv", Tensor::zeros({d}));
    lp.wo = registry.add(p + "attn.wo", normal_init({d, d}, init_rng));
    lp.bo = registry.add(p + "attn.bo", Tensor::zeros({d}));
    lp.ln2_gain = registry.add(p + "ln2.gain", Tensor::ones({d}));
    lp.ln2_bias = registry.add(p + "ln2.bias", Tensor::zeros({d}));
    lp.ffn_w1 = registry.add(p + "ffn.w1", normal_init({d, f}, init_rng));
    lp.ffn_b1 = registry.add(p + "ffn.b1", Tensor::zeros({f}));
    lp.ffn_w2 = registry.add(p + "ffn.w2", normal_init({f, d}, init_rng));
    lp.ffn_b2 = registry.add(p + "ffn.b2", Tensor::zeros({d}));
    st.layers.push_back(std::move(lp));
  }
  st.final_ln_gain = registry.add(prefix + ".final_ln.gain", Tensor::ones({d}));
  st.final_ln_bias = registry.add(prefix + ".final_ln.bias", Tensor::zeros({d}));
  return st;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw std::invalid_argument("attention: q/k/v must be [heads, rows, head_dim]");
  }
  const auto dh = q.shape()[2];
  Tensor scores = scale(matmul_nt(q, k), 1.0f / std::sqrt(static_cast<float>(dh)));
  if (mask.defined()) scores = add(scores, mask);
  return matmul(softmax(scores, -1), v);
}

Tensor make_pad_mask(std::span<const std::uint8_t> keep) {
  const auto n = static_cast<std::int64_t>(keep.size());
  std::vector<float> m(static_cast<std::size_t>(n * n), 0.0f);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      if (!keep[static_cast<std::size_t>(j)]) m[static_cast<std::size_t>(i * n + j)] = kMaskValue;
    }
  }
  return Tensor::from_data({n, n}, std::move(m));
}

TransformerOutput transformer_forward(const TransformerState& state, const Tensor& input,
                                      const Tensor& attn_mask,
                                      std::span<const std::int32_t> positions,
                                      std::span<const LayerModulation> modulation) {
  const auto& cfg = state.config;
  if (input.rank() != 2 || input.shape()[1] != cfg.model_dim) {
    throw std::invalid_argument("transformer: input must be [rows, " +
                                std::to_string(cfg.model_dim) + "], got " +
                                shape_str(input.shape()));
  }
  const std::int64_t rows = input.shape()[0];
  if (rows > cfg.max_positions) {
    throw std::invalid_argument("transformer: sequence length " + std::to_string(rows) +
                                " exceeds max_positions " + std::to_string(cfg.max_positions));
  }
  if (!modulation.empty() && modulation.size() != state.layers.size()) {
    throw std::invalid_argument("transformer: modulation entries must match layer count");
  }

  std::vector<std::int32_t> default_pos;
  if (positions.empty()) {
    default_pos.resize(static_cast<std::size_t>(rows));
    std::iota(default_pos.begin(), default_pos.end(), 0);
    positions = default_pos;
  } else if (static_cast<std::int64_t>(positions.size()) != rows) {
    throw std::invalid_argument("transformer: positions size mismatch");
  }

  auto modulate = [&](Tensor h, int layer) {
    if (modulation.empty()) return h;
    const auto& m = modulation[static_cast<std::size_t>(layer)];
    return add(mul(h, add_scalar(m.scale, 1.0f)), m.shift);
  };

  TransformerOutput out;
  Tensor x = input;
  for (int l = 0; l < cfg.layers; ++l) {
    const auto& lp = state.layers[static_cast<std::size_t>(l)];

    Tensor h = modulate(layer_norm(x, lp.ln1_gain, lp.ln1_bias), l);
    Tensor q = split_heads(linear(h, lp.wq, lp.bq), cfg.heads);
    Tensor k = split_heads(linear(h, lp.wk, lp.bk), cfg.heads);
    if (cfg.use_rope) {
      q = rope(q, positions, cfg.rope_base);
      k = rope(k, positions, cfg.rope_base);
    }
    Tensor v = split_heads(linear(h, lp.wv, lp.bv), cfg.heads);
    Tensor attn_out = merge_heads(attention(q, k, v, attn_mask));
    x = add(x, linear(attn_out, lp.wo, lp.bo));

    Tensor f = modulate(layer_norm(x, lp.ln2_gain, lp.ln2_bias), l);
    Tensor ffn = linear(silu(linear(f, lp.ffn_w1, lp.ffn_b1)), lp.ffn_w2, lp.ffn_b2);
    x = add(x, ffn);

    out.layer_outputs.push_back(x);
  }
  out.final_output = layer_norm(x, state.final_ln_gain, state.final_ln_bias);
  return out;
}

}  // namespace tldm
