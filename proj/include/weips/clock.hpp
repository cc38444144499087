#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <thread>

namespace weips {

// Milliseconds since an arbitrary epoch. Wall mode reads steady_clock;
// logical mode only moves when advanced, which makes period-driven behavior
// (gather timers, checkpoint schedules) deterministically testable.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
  virtual void sleep_ms(std::int64_t ms) = 0;
};

class WallClock final : public Clock {
 public:
  std::int64_t now_ms() const override {
    using namespace std::chrono;
    return duration_cast<milliseconds>(steady_clock::now().time_since_epoch())
        .count();
  }
  void sleep_ms(std::int64_t ms) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  }
};

class LogicalClock final : public Clock {
 public:
  std::int64_t now_ms() const override {
    std::lock_guard<std::mutex> lk(mu_);
    return now_;
  }

  // Sleepers wake when the clock is advanced past their deadline. A real-time
  // cap keeps threads from deadlocking if nobody advances the clock anymore.
  void sleep_ms(std::int64_t ms) override {
    std::unique_lock<std::mutex> lk(mu_);
    const std::int64_t deadline = now_ + ms;
    cv_.wait_for(lk, std::chrono::milliseconds(50),
                 [&] { return now_ >= deadline || stopped_; });
  }

  void advance_ms(std::int64_t ms) {
    std::lock_guard<std::mutex> lk(mu_);
    now_ += ms;
    cv_.notify_all();
  }

  void stop() {
    std::lock_guard<std::mutex> lk(mu_);
    stopped_ = true;
    cv_.notify_all();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::int64_t now_ = 0;
  bool stopped_ = false;
};

}  // namespace weips
