#include "ei/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace ei {

namespace {

std::atomic<Precision> g_precision{Precision::f32};
std::atomic<std::uint64_t> g_next_id{1};

std::uint64_t splitmix64(std::uint64_t& s) {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Precision precision() { return g_precision.load(std::memory_order_relaxed); }

void set_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

double quantize(double v) {
    return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

std::uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double std) {
    // Box-Muller; u1 in (0,1] so log stays finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + std * z;
}

double Rng::trunc_normal(double mean, double std) {
    for (;;) {
        double z = normal(0.0, 1.0);
        if (z >= -2.0 && z <= 2.0) return mean + std * z;
    }
}

std::uint64_t Rng::below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

std::uint64_t Rng::derive(std::uint64_t seed, std::string_view label) {
    // FNV-1a over the seed bytes then the label, finalized by splitmix64.
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (int i = 0; i < 8; ++i) {
        h ^= (seed >> (8 * i)) & 0xFF;
        h *= 0x100000001B3ULL;
    }
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return splitmix64(h);
}

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::shared_ptr<detail::TensorNode> make_node(std::vector<std::int64_t> shape, bool requires_grad) {
    for (auto d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return node;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    auto node = make_node(std::move(shape), requires_grad);
    node->values.assign(static_cast<std::size_t>(shape_numel(node->shape)), 0.0);
    return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    auto node = make_node(std::move(shape), requires_grad);
    node->values.assign(static_cast<std::size_t>(shape_numel(node->shape)), quantize(value));
    return Tensor(std::move(node));
}

Tensor Tensor::from(std::vector<std::int64_t> shape, std::vector<double> values, bool requires_grad) {
    auto node = make_node(std::move(shape), requires_grad);
    if (shape_numel(node->shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(node->shape));
    }
    for (auto& v : values) v = quantize(v);
    node->values = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

std::int64_t Tensor::numel() const { return shape_numel(node_->shape); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str());
    return node_->values[0];
}

std::span<const double> Tensor::grad() const {
    static const std::vector<double> kEmpty;
    return node_->grad.empty() ? std::span<const double>(kEmpty) : std::span<const double>(node_->grad);
}

std::span<double> Tensor::grad_buffer() {
    if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
    return node_->grad;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::drop_grad() { node_->grad.clear(); }

Tensor Tensor::clone() const {
    auto node = make_node(node_->shape, node_->requires_grad);
    node->values = node_->values;
    return Tensor(std::move(node));
}

std::string Tensor::shape_str() const { return shape_to_string(node_->shape); }

}  // namespace ei
