#pragma once

#include <string_view>

namespace cfrag {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Messages below this level are dropped. Defaults to Info.
void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes "[level] message" to stderr; safe to call from several threads.
void log(LogLevel level, std::string_view message);

inline void log_info(std::string_view m) { log(LogLevel::Info, m); }
inline void log_warn(std::string_view m) { log(LogLevel::Warn, m); }

}  // namespace cfrag
