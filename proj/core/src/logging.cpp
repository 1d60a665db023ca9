#include "flight/logging.hpp"

#include <cstdlib>
#include <cstring>
#include <iostream>

namespace flight::log {

Level level() {
  static Level lv = [] {
    const char* env = std::getenv("FLIGHT_LOG");
    if (!env) return Level::Error;
    if (!std::strcmp(env, "debug")) return Level::Debug;
    if (!std::strcmp(env, "info")) return Level::Info;
    return Level::Error;
  }();
  return lv;
}

void emit(Level lv, const std::string& msg) {
  const char* tag = lv == Level::Error ? "error" : lv == Level::Info ? "info" : "debug";
  std::cerr << "[flight:" << tag << "] " << msg << "\n";
}

}  // namespace flight::log
