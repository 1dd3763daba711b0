#pragma once

#include "bcaps/error.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace bcaps {

/// Records the non-differentiated quantities of a forward pass (routing
/// couplings, sampled noise) and replays them on later passes, so that a
/// finite-difference probe evaluates the same function the backward pass
/// differentiates.
template <class T>
class ForwardTrace {
public:
    enum class Mode { record, replay };

    Mode mode() const { return mode_; }

    /// Switches to replay and rewinds. Call between forward passes.
    void freeze() {
        mode_ = Mode::replay;
        cursor_ = 0;
    }
    void rewind() { cursor_ = 0; }

    /// In record mode stores `produce()`; in replay mode returns the next stored slot.
    template <class F>
    const std::vector<T>& capture(F&& produce) {
        if (mode_ == Mode::record) {
            slots_.push_back(std::forward<F>(produce)());
            return slots_.back();
        }
        if (cursor_ >= slots_.size()) throw ContractError("forward trace replayed past its recorded length");
        return slots_[cursor_++];
    }

    std::size_t size() const { return slots_.size(); }

private:
    Mode mode_ = Mode::record;
    std::size_t cursor_ = 0;
    std::vector<std::vector<T>> slots_;
};

} // namespace bcaps
