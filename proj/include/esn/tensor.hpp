#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace esn {

using index_t = std::int64_t;

// Error categories map to CLI exit codes (config 2, data 3, numeric 4).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Dense 4-d layout: batch, channel, row, column (row-major, contiguous).
struct Shape {
    index_t b = 1, c = 1, h = 1, w = 1;

    index_t numel() const { return b * c * h * w; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

inline bool is_scalar_shape(const Shape& s) { return s.numel() == 1; }

// Toggles the NaN/Inf scan run after every op forward and gradient
// accumulation. On by default; flip off only for throwaway benchmarks.
bool finite_checks_enabled();
void set_finite_checks(bool on);

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily; empty means "no gradient yet"
    bool requires_grad = false;
};

template <typename T>
void check_finite_span(const std::vector<T>& v, const char* what) {
    if (!finite_checks_enabled()) return;
    for (const T x : v) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw NumericError(std::string("non-finite value detected in ") + what);
        }
    }
}

}  // namespace detail

// Shared-storage tensor handle. Copies alias the same node, so gradients
// accumulate in one place no matter how many handles exist. Methods are
// const-qualified handle operations: they mutate the shared node, not the
// handle itself.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape s, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        node_->shape = s;
        node_->value.assign(static_cast<std::size_t>(s.numel()), fill);
        node_->requires_grad = requires_grad;
    }

    static Tensor from_data(Shape s, std::vector<T> data, bool requires_grad = false) {
        if (static_cast<index_t>(data.size()) != s.numel()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + s.str());
        }
        Tensor t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->shape = s;
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    index_t numel() const { return node_->shape.numel(); }

    std::vector<T>& data() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) const {
        node_->requires_grad = rg;
        if (!rg) node_->grad.clear();
    }

    bool grad_allocated() const { return !node_->grad.empty(); }
    std::vector<T>& grad() const {
        ensure_grad();
        return node_->grad;
    }
    void ensure_grad() const {
        if (node_->grad.empty()) {
            node_->grad.assign(node_->value.size(), T(0));
        }
    }
    void zero_grad() const {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    index_t offset(index_t b, index_t c, index_t y, index_t x) const {
        const Shape& s = node_->shape;
        return ((b * s.c + c) * s.h + y) * s.w + x;
    }
    T& at(index_t b, index_t c, index_t y, index_t x) const {
        return node_->value[static_cast<std::size_t>(offset(b, c, y, x))];
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape().str());
        return node_->value[0];
    }

    // Deep copy detached from any graph.
    Tensor clone() const {
        Tensor t;
        t.node_ = std::make_shared<detail::Node<T>>();
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        t.node_->requires_grad = false;
        return t;
    }

    detail::Node<T>* node() const { return node_.get(); }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<detail::Node<T>> node_;
};

// Tape of executed operations. Ops append their backward rule while the
// graph is active; backward() replays the tape once, in reverse execution
// order, accumulating gradients additively.
template <typename T>
class Graph {
public:
    Graph() : parent_(current_ref()) { current_ref() = this; }
    ~Graph() { current_ref() = parent_; }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    static Graph* current() { return current_ref(); }

    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    std::size_t size() const { return steps_.size(); }
    bool consumed() const { return consumed_; }

    void backward(const Tensor<T>& loss) {
        if (consumed_) throw Error("backward() called twice on the same graph");
        if (!loss.defined() || !is_scalar_shape(loss.shape())) {
            throw ShapeError("backward() requires a scalar loss, got " +
                             (loss.defined() ? loss.shape().str() : std::string("<null>")));
        }
        consumed_ = true;
        loss.node()->grad.assign(1, T(1));
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    static Graph*& current_ref() {
        thread_local Graph* cur = nullptr;
        return cur;
    }

    std::vector<std::function<void()>> steps_;
    Graph* parent_ = nullptr;
    bool consumed_ = false;
};

namespace detail {

// True when an op with the given inputs should land on the active tape.
template <typename T>
bool tracing(std::initializer_list<const Tensor<T>*> inputs) {
    if (Graph<T>::current() == nullptr) return false;
    for (const Tensor<T>* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

template <typename T>
void record_step(std::function<void()> step) {
    Graph<T>::current()->record(std::move(step));
}

// Gradient of `out` if one was deposited during the backward sweep;
// nullptr when this branch never received a gradient (e.g. diagnostics).
template <typename T>
const std::vector<T>* upstream(const Tensor<T>& out) {
    if (!out.grad_allocated()) return nullptr;
    return &out.node()->grad;
}

}  // namespace detail

template <typename T>
void backward(Graph<T>& graph, const Tensor<T>& loss) {
    graph.backward(loss);
}

}  // namespace esn
