#pragma once

#include <memory>
#include <mutex>

namespace rrm {

// An immutable value behind an atomically swappable reference. Readers keep whichever
// snapshot they loaded alive for as long as they hold it.
template <class T>
class Snapshot {
  public:
    Snapshot() = default;
    explicit Snapshot(std::shared_ptr<const T> v) : value_(std::move(v)) {}

    std::shared_ptr<const T> load() const {
        std::lock_guard lk(mu_);
        return value_;
    }

    void store(std::shared_ptr<const T> v) {
        std::lock_guard lk(mu_);
        value_.swap(v);
    }

  private:
    mutable std::mutex mu_;
    std::shared_ptr<const T> value_;
};

} // namespace rrm
