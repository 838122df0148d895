#include "ei/tape.hpp"

namespace ei {

namespace {
thread_local Tape* t_current = nullptr;
}

Tape* Tape::current() { return t_current; }

void Tape::record(const char* op, std::vector<std::uint64_t> input_ids, std::uint64_t output_id,
                  std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(input_ids), output_id, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() requires a scalar loss, got " + loss.shape_str());
    }
    loss.node()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        it->backward();
    }
}

TapeScope::TapeScope(Tape& tape) : prev_(t_current) { t_current = &tape; }

TapeScope::~TapeScope() { t_current = prev_; }

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (!t_current) return false;
    for (const Tensor* t : inputs) {
        if (t && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

}  // namespace ei
