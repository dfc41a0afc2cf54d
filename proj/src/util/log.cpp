#include "gtalk/util/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace gtalk::log {

namespace {
std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;
const char* tag(Level l) {
    switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    default: return "";
    }
}
} // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level.load(); }

void write(Level l, const std::string& message) {
    if (l < g_level.load() || l == Level::off) return;
    std::lock_guard lock(g_mutex);
    std::cerr << "[" << tag(l) << "] " << message << '\n';
}

} // namespace gtalk::log
