#ifndef TEXTLDM_TENSOR_HPP
#define TEXTLDM_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "textldm/rng.hpp"

namespace tldm {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node;

struct BackwardCtx {
  const float* out_grad = nullptr;
  /// Accumulation buffer for parent i, or nullptr when that parent does not
  /// need a gradient. Buffers are zero-initialized by the engine.
  float* parent_grad(std::size_t i) const;

  Node* node = nullptr;
  void* engine = nullptr;
};

struct Node {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;   // leaf flag
  bool grad_reachable = false;  // this value influences some requires_grad leaf
  std::string name;             // parameters only
  std::uint64_t id = 0;

  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const BackwardCtx&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

/// Dense row-major float32 tensor with reverse-mode differentiation.
///
/// Tensors are cheap shared handles. Data is immutable after construction
/// except through overwrite_data(), which is reserved for the optimizer's
/// in-place parameter updates on leaf tensors outside any live graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from_data(Shape shape, std::vector<float> values);
  static Tensor scalar(float value);
  /// i.i.d. standard normal values; deterministic for a fixed rng stream.
  static Tensor gaussian(Shape shape, Rng& rng);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  std::int64_t size(int axis) const;  // negative axis counts from the back
  std::int64_t numel() const;
  std::span<const float> data() const;
  float item() const;
  float at(std::initializer_list<std::int64_t> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  const std::string& name() const;
  Tensor& set_name(std::string name);
  std::uint64_t id() const;
  bool is_leaf() const;

  /// Shares the data without any graph link (stop-gradient).
  Tensor detach() const;

  /// In-place overwrite for leaf tensors (optimizer updates). The node id is
  /// preserved so existing handles keep observing the parameter.
  void overwrite_data(std::span<const float> values);

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op_result(Shape shape, std::vector<float> data,
                               std::vector<Tensor> inputs,
                               std::function<void(const detail::BackwardCtx&)> backward);
};

/// Builds a graph node for an op result. `backward` may be empty for
/// non-differentiable results.
Tensor make_op_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                      std::function<void(const detail::BackwardCtx&)> backward);

/// Gradients keyed by the id of the leaf tensor they belong to. Leaves that
/// do not participate in the loss have no entry; grad() materializes an exact
/// zero tensor for them.
class GradientRecord {
 public:
  bool has(const Tensor& t) const;
  /// Gradient for `t`, or zeros of its shape when `t` was unused.
  Tensor grad(const Tensor& t) const;
  const Tensor* find(const Tensor& t) const;
  void set(std::uint64_t id, Tensor grad);
  /// record += scale * other (elementwise per key; missing keys are inserted).
  void accumulate(const GradientRecord& other, float scale = 1.0f);
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::unordered_map<std::uint64_t, Tensor> grads_;
};

/// Reverse-mode accumulation from a scalar loss back to every reachable
/// requires_grad leaf. Throws std::invalid_argument on a non-scalar loss.
GradientRecord backward(const Tensor& loss);

/// While a guard is alive, ops do not record the graph and results do not
/// require grad. Used for frozen forward passes (teacher, sampling).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

/// Debug assertion mode: when enabled, every forward op verifies its output
/// is free of NaN/Inf and throws std::runtime_error otherwise.
void set_debug_check_finite(bool enabled);
bool debug_check_finite_enabled();

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

// Elementwise with right-aligned broadcasting (equal-or-one dimensions).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor exp(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, float s) { return scale(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return scale(a, s); }

/// Matrix product. 2-D x 2-D, or 3-D x 3-D with leading batch dimensions
/// broadcast by equality-or-one. Mixed 3-D x 2-D is treated as batch x shared.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a · transpose(b) over the last two axes, without materializing the
/// transpose. Same batching rules as matmul.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, std::int64_t begin, std::int64_t end);
/// [N, H*dh] -> [H, N, dh]
Tensor split_heads(const Tensor& a, int heads);
/// [H, N, dh] -> [N, H*dh]
Tensor merge_heads(const Tensor& a);

/// Numerically stabilized softmax along `axis` (negative counts from back).
Tensor softmax(const Tensor& a, int axis = -1);
/// Normalization over the last axis: gain * (x - mean) / sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);
/// Row gather: weight[ids[i], :] -> output row i.
Tensor embedding(const Tensor& weight, std::span<const std::int32_t> ids);
/// Pairwise rotation of the last axis by angle pos * base^(-2i/dh). Accepts
/// [N, dh] or [H, N, dh]; `positions` has one entry per row N.
Tensor rope(const Tensor& a, std::span<const std::int32_t> positions, double base);

// Reductions (double accumulation internally, fixed order).
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over the last axis: [..., D] -> [...].
Tensor sum_last(const Tensor& a);

/// Mean over unmasked positions of -log softmax(logits)[target]. `mask` may
/// be empty (all positions count) or hold one 0/1 byte per position.
Tensor cross_entropy_from_logits(const Tensor& logits,
                                 std::span<const std::int32_t> targets,
                                 std::span<const std::uint8_t> mask = {});

/// Cosine similarity along the last axis; output drops that axis. Returns 0
/// for rows where either norm is below 1e-12, with zero gradient there.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace tldm

#endif  // TEXTLDM_TENSOR_HPP
