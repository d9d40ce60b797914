#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace safegen {

// Process-wide sink for informational notes (renormalizations, ridge
// regularization, config precedence). Tests swap it to capture messages.
class Log {
 public:
  using Sink = std::function<void(const std::string&)>;

  static void note(const std::string& msg) {
    std::lock_guard lock(mutex());
    if (sink()) sink()(msg);
  }

  static Sink set_sink(Sink s) {
    std::lock_guard lock(mutex());
    return std::exchange(sink(), std::move(s));
  }

 private:
  static Sink& sink() {
    static Sink s = [](const std::string& m) { std::clog << "[safegen] " << m << '\n'; };
    return s;
  }
  static std::mutex& mutex() {
    static std::mutex m;
    return m;
  }
};

}  // namespace safegen
