#include "textldm/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace tldm {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
std::atomic<bool> g_check_finite{false};
thread_local int g_no_grad_depth = 0;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<float> data) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    std::ostringstream os;
    os << "tensor: shape " << shape_str(shape) << " expects " << shape_numel(shape)
       << " values, got " << data.size();
    throw std::invalid_argument(os.str());
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void check_finite(const detail::Node& n, const char* what) {
  for (float v : n.data) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite value in " << what << " output, shape " << shape_str(n.shape);
      throw std::runtime_error(os.str());
    }
  }
}

}  // namespace

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f)));
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0f); }

Tensor Tensor::full(Shape shape, float value) {
  auto n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values) {
  return Tensor(new_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(float value) { return from_data({}, {value}); }

Tensor Tensor::gaussian(Shape shape, Rng& rng) {
  auto n = shape_numel(shape);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.next_gaussian());
  return Tensor(new_node(std::move(shape), std::move(v)));
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

std::int64_t Tensor::size(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("tensor: axis out of range for shape " + shape_str(node_->shape));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

std::int64_t Tensor::numel() const { return node_->numel(); }
std::span<const float> Tensor::data() const { return {node_->data.data(), node_->data.size()}; }

float Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("tensor: item() requires a single-element tensor, shape is " +
                                shape_str(node_->shape));
  }
  return node_->data[0];
}

float Tensor::at(std::initializer_list<std::int64_t> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) {
    throw std::invalid_argument("tensor: at() index rank mismatch");
  }
  std::int64_t flat = 0;
  std::size_t i = 0;
  for (std::int64_t v : idx) {
    flat = flat * s[i] + v;
    ++i;
  }
  return node_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!node_->is_leaf()) {
    throw std::invalid_argument("tensor: requires_grad can only be set on leaf tensors");
  }
  node_->requires_grad = value;
  node_->grad_reachable = value;
  return *this;
}

const std::string& Tensor::name() const { return node_->name; }

Tensor& Tensor::set_name(std::string name) {
  node_->name = std::move(name);
  return *this;
}

std::uint64_t Tensor::id() const { return node_->id; }
bool Tensor::is_leaf() const { return node_->is_leaf(); }

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->data = node_->data;  // copy keeps the detached value immutable
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(n));
}

void Tensor::overwrite_data(std::span<const float> values) {
  if (!node_->is_leaf()) {
    throw std::invalid_argument("tensor: overwrite_data is only valid on leaf tensors");
  }
  if (values.size() != node_->data.size()) {
    throw std::invalid_argument("tensor: overwrite_data size mismatch");
  }
  std::copy(values.begin(), values.end(), node_->data.begin());
}

Tensor make_op_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                      std::function<void(const detail::BackwardCtx&)> backward_fn) {
  auto n = new_node(std::move(shape), std::move(data));
  if (g_check_finite.load(std::memory_order_relaxed)) check_finite(*n, "op");
  if (g_no_grad_depth == 0 && backward_fn) {
    bool reachable = false;
    for (const auto& t : inputs) reachable = reachable || t.node()->grad_reachable;
    if (reachable) {
      n->grad_reachable = true;
      n->parents.reserve(inputs.size());
      for (const auto& t : inputs) n->parents.push_back(t.node());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward engine
// ---------------------------------------------------------------------------

namespace {

struct Engine {
  std::unordered_map<const detail::Node*, std::vector<float>> grads;

  float* grad_buffer(const std::shared_ptr<detail::Node>& n) {
    auto it = grads.find(n.get());
    if (it == grads.end()) {
      it = grads.emplace(n.get(), std::vector<float>(n->data.size(), 0.0f)).first;
    }
    return it->second.data();
  }
};

}  // namespace

float* detail::BackwardCtx::parent_grad(std::size_t i) const {
  const auto& parent = node->parents[i];
  if (!parent->grad_reachable) return nullptr;
  return static_cast<Engine*>(engine)->grad_buffer(parent);
}

GradientRecord backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }

  // Topological order by iterative DFS over grad-reachable nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  detail::Node* root = loss.node().get();
  if (root->grad_reachable) stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child == 0 && visited.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next_child < node->parents.size()) {
      detail::Node* child = node->parents[next_child++].get();
      if (child->grad_reachable && !visited.count(child)) stack.emplace_back(child, 0);
    } else {
      visited.insert(node);
      order.push_back(node);
      stack.pop_back();
    }
  }

  Engine engine;
  engine.grads[root] = {1.0f};

  GradientRecord record;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    auto git = engine.grads.find(node);
    if (git == engine.grads.end()) continue;  // not reached by any path
    if (node->backward_fn) {
      detail::BackwardCtx ctx;
      ctx.out_grad = git->second.data();
      ctx.node = node;
      ctx.engine = &engine;
      node->backward_fn(ctx);
      engine.grads.erase(git);  // interior grads are no longer needed
    } else if (node->requires_grad) {
      record.set(node->id, Tensor::from_data(node->shape, std::move(git->second)));
      engine.grads.erase(git);
    }
  }
  return record;
}

// ---------------------------------------------------------------------------
// GradientRecord
// ---------------------------------------------------------------------------

bool GradientRecord::has(const Tensor& t) const { return grads_.count(t.id()) > 0; }

Tensor GradientRecord::grad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return it->second;
}

const Tensor* GradientRecord::find(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

void GradientRecord::set(std::uint64_t id, Tensor grad) { grads_[id] = std::move(grad); }

void GradientRecord::accumulate(const GradientRecord& other, float s) {
  for (const auto& [id, g] : other.grads_) {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
      std::vector<float> scaled(g.data().begin(), g.data().end());
      for (auto& v : scaled) v *= s;
      grads_.emplace(id, Tensor::from_data(g.shape(), std::move(scaled)));
    } else {
      if (it->second.shape() != g.shape()) {
        throw std::invalid_argument("GradientRecord: shape mismatch while accumulating");
      }
      std::vector<float> merged(it->second.data().begin(), it->second.data().end());
      auto src = g.data();
      for (std::size_t i = 0; i < merged.size(); ++i) merged[i] += s * src[i];
      it->second = Tensor::from_data(g.shape(), std::move(merged));
    }
  }
}

// ---------------------------------------------------------------------------
// Guards
// ---------------------------------------------------------------------------

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

void set_debug_check_finite(bool enabled) {
  g_check_finite.store(enabled, std::memory_order_relaxed);
}

bool debug_check_finite_enabled() { return g_check_finite.load(std::memory_order_relaxed); }

}  // namespace tldm
