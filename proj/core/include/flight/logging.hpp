#pragma once

#include <sstream>
#include <string>

namespace flight::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

// Current level comes from FLIGHT_LOG (error|info|debug), default error.
Level level();
void emit(Level lv, const std::string& msg);

template <typename... Args>
void write(Level lv, Args&&... args) {
  if (lv > level()) return;
  std::ostringstream os;
  (os << ... << args);
  emit(lv, os.str());
}

template <typename... Args>
void info(Args&&... args) {
  write(Level::Info, std::forward<Args>(args)...);
}

template <typename... Args>
void debug(Args&&... args) {
  write(Level::Debug, std::forward<Args>(args)...);
}

template <typename... Args>
void error(Args&&... args) {
  write(Level::Error, std::forward<Args>(args)...);
}

}  // namespace flight::log
