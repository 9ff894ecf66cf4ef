#include "sslalm/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "sslalm/errors.hpp"

namespace sslalm {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {
thread_local Graph* g_active_graph = nullptr;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  if (requires_grad && g_active_graph) g_active_graph->track_leaf(t);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("tensor: item() on non-scalar shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data[row * impl_->shape.back() + col];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) {
  if (value && !impl_->requires_grad && g_active_graph) g_active_graph->track_leaf(*this);
  impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<double> Tensor::grad() const {
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<const double> Tensor::grad_view() const { return impl_->grad; }

void Tensor::accumulate_grad(std::span<const double> delta) const {
  auto g = grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::drop_grad() const { impl_->grad.clear(); }

Tensor Tensor::clone() const { return from(impl_->shape, impl_->data, false); }

void Graph::record(std::string op, std::vector<Tensor> inputs, Tensor output,
                   std::function<void()> backward) {
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

Graph* Graph::active() { return g_active_graph; }

Graph::Scope::Scope(Graph& graph) : previous_(g_active_graph) { g_active_graph = &graph; }
Graph::Scope::~Scope() { g_active_graph = previous_; }

void backward(Graph& graph, const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Tensor seed = loss;
  seed.grad()[0] += 1.0;

  const auto& nodes = graph.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->output.grad_view().empty()) continue;  // not on a path to the loss
    it->backward();
  }

  // Leaves that the loss does not depend on still get a (zero) gradient.
  std::unordered_set<const void*> produced;
  for (const auto& node : nodes) produced.insert(node.output.data().data());
  for (const auto& leaf : graph.leaves()) leaf.grad();
  for (const auto& node : nodes) {
    for (const auto& in : node.inputs) {
      if (in.requires_grad() && !produced.count(in.data().data())) {
        Tensor leaf = in;
        leaf.grad();
      }
    }
  }
}

}  // namespace sslalm
