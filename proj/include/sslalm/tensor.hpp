#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sslalm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Row-major float64 array with an optional gradient buffer.
//
// Tensor is a shared handle: copies alias the same storage. Forward ops never
// write into their inputs; only parameter updates (optimizer, checkpoint load)
// go through mutable_data().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  // Gradient accessors are const on the handle: the buffer is shared state
  // that backward closures write through captured copies.
  bool has_grad() const;
  // Allocates a zero buffer on first access.
  std::span<double> grad() const;
  std::span<const double> grad_view() const;
  void accumulate_grad(std::span<const double> delta) const;
  void zero_grad() const;
  void drop_grad() const;

  // Deep copy of data and shape; the copy has no grad and no graph history.
  Tensor clone() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Tape of recorded ops. Ops append to the graph active on the current thread
// whenever at least one input requires grad; backward replays the tape in
// reverse.
class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);
  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() {
    nodes_.clear();
    leaves_.clear();
  }

  // Leaves created (or switched to requires_grad) while this graph is active.
  // They receive a gradient even if no op consumes them.
  void track_leaf(const Tensor& leaf) { leaves_.push_back(leaf); }
  const std::vector<Tensor>& leaves() const { return leaves_; }

  static Graph* active();

  // Makes `graph` the active graph for the current thread until destruction.
  class Scope {
   public:
    explicit Scope(Graph& graph);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* previous_;
  };

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> leaves_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate into leaves;
// call zero_grad on parameters between independent steps.
void backward(Graph& graph, const Tensor& loss);

}  // namespace sslalm
