#pragma once

#include <functional>
#include <string>

namespace stylegs {

enum class LogLevel { debug, info, warn };

using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Replaces the process-wide sink (default: info and warn to stderr).
/// Passing an empty function restores the default. Returns the previous sink.
LogSink set_log_sink(LogSink sink);

void log_message(LogLevel level, const std::string& message);
inline void log_info(const std::string& message) { log_message(LogLevel::info, message); }
inline void log_warn(const std::string& message) { log_message(LogLevel::warn, message); }

}  // namespace stylegs
