#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ei/errors.hpp"

namespace ei {

// Global scalar precision. f32 stores every tensor value rounded to the
// float grid (accumulation still runs in double); f64 keeps full doubles.
// Gradient checking requires f64 because central differences drown in
// f32 rounding noise.
enum class Precision { f32, f64 };

Precision precision();
void set_precision(Precision p);

// Rounds v to the active precision's representable grid.
double quantize(double v);

// RAII precision override, restores the previous mode on scope exit.
class PrecisionScope {
  public:
    explicit PrecisionScope(Precision p) : prev_(precision()) { set_precision(p); }
    ~PrecisionScope() { set_precision(prev_); }
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

  private:
    Precision prev_;
};

// Deterministic RNG: splitmix64 stream + Box-Muller normals. Avoids
// std::normal_distribution so streams are reproducible across stdlibs.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double normal(double mean = 0.0, double std = 1.0);
    // Normal resampled until within mean +- 2*std (the usual ViT init).
    double trunc_normal(double mean = 0.0, double std = 1.0);
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Derives an independent stream id from a base seed and a label, so
    // components draw from stable streams regardless of creation order.
    static std::uint64_t derive(std::uint64_t seed, std::string_view label);

  private:
    std::uint64_t state_;
};

namespace detail {
struct TensorNode {
    std::vector<std::int64_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::uint64_t id = 0;
};
}  // namespace detail

// Dense row-major tensor. Value-semantic handle: copies share storage
// (needed so the tape and the optimizer see the same parameter).
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<std::int64_t> shape, std::vector<double> values,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::int64_t>& shape() const { return node_->shape; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(node_->shape.size()); }
    std::int64_t dim(std::int64_t axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
    std::int64_t numel() const;
    std::uint64_t id() const { return node_->id; }

    std::span<const double> values() const { return node_->values; }
    // Direct mutation is reserved for initialization, the optimizer step
    // and deserialization; it bypasses the tape on purpose.
    std::span<double> raw_values() { return node_->values; }

    double value_at(std::int64_t flat_index) const {
        return node_->values[static_cast<std::size_t>(flat_index)];
    }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const;
    std::span<double> grad_buffer();  // allocates (zeroed) on first use
    void zero_grad();
    void drop_grad();

    // Deep copy of values; fresh node, no grad, same requires_grad flag.
    Tensor clone() const;

    // Identity of the underlying storage (two handles to one node).
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    detail::TensorNode* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> shared_node() const { return node_; }

    std::string shape_str() const;

  private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
};

std::int64_t shape_numel(const std::vector<std::int64_t>& shape);
std::string shape_to_string(const std::vector<std::int64_t>& shape);

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

}  // namespace ei
