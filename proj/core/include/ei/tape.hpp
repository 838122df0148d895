#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ei/tensor.hpp"

namespace ei {

// Reverse-mode tape. Ops append one node per primitive application while
// a TapeScope is active; backward() replays the closures in exact reverse
// recording order, accumulating into .grad buffers.
class Tape {
  public:
    struct Node {
        const char* op;
        std::vector<std::uint64_t> input_ids;
        std::uint64_t output_id;
        std::function<void()> backward;
    };

    void record(const char* op, std::vector<std::uint64_t> input_ids, std::uint64_t output_id,
                std::function<void()> backward);

    // Seeds d(loss)/d(loss) = 1 and walks the tape backwards. loss must
    // be a scalar (numel == 1).
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

    static Tape* current();

  private:
    friend class TapeScope;
    std::vector<Node> nodes_;
};

// Installs a tape as the thread's recording target.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// True when a tape is active and any of the inputs requires grad, i.e.
// the op at hand must record itself.
bool recording(std::initializer_list<const Tensor*> inputs);

}  // namespace ei
