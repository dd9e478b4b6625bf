#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace sgvlp {

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
  return sink;
}

inline void warn(const std::string& msg) {
  if (warning_sink()) warning_sink()(msg);
}

/// Routes warnings to `sink` for the guard's lifetime.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink) : previous_(warning_sink()) {
    warning_sink() = std::move(sink);
  }
  ~ScopedWarningSink() { warning_sink() = previous_; }
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink previous_;
};

}  // namespace sgvlp
