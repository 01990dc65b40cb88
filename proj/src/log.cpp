#include "stylegs/log.hpp"

#include <iostream>
#include <mutex>

namespace stylegs {

namespace {

std::mutex g_mutex;

void default_sink(LogLevel level, const std::string& message) {
  if (level == LogLevel::debug) return;
  std::cerr << (level == LogLevel::warn ? "warning: " : "") << message << '\n';
}

LogSink& sink() {
  static LogSink s = default_sink;
  return s;
}

}  // namespace

LogSink set_log_sink(LogSink next) {
  std::lock_guard<std::mutex> lock(g_mutex);
  LogSink previous = sink();
  sink() = next ? std::move(next) : LogSink(default_sink);
  return previous;
}

void log_message(LogLevel level, const std::string& message) {
  std::lock_guard<std::mutex> lock(g_mutex);
  sink()(level, message);
}

}  // namespace stylegs
