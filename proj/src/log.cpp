#include "comflp/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace comflp::log {

namespace {

Level level_from_env() {
    const char* env = std::getenv("COMFLP_LOG");
    if (!env)
        return Level::warn;
    std::string_view v(env);
    if (v == "quiet" || v == "0")
        return Level::quiet;
    if (v == "info" || v == "2")
        return Level::info;
    if (v == "debug" || v == "3")
        return Level::debug;
    return Level::warn;
}

std::atomic<int>& current() {
    static std::atomic<int> lvl{static_cast<int>(level_from_env())};
    return lvl;
}

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

Level level() { return static_cast<Level>(current().load(std::memory_order_relaxed)); }

void set_level(Level lvl) { current().store(static_cast<int>(lvl), std::memory_order_relaxed); }

void write(Level lvl, const std::string& msg) {
    const char* tag = "";
    switch (lvl) {
    case Level::warn:
        tag = "[comflp] warning: ";
        break;
    case Level::info:
        tag = "[comflp] ";
        break;
    case Level::debug:
        tag = "[comflp] debug: ";
        break;
    case Level::quiet:
        return;
    }
    std::lock_guard<std::mutex> lock(sink_mutex());
    std::cerr << tag << msg << '\n';
}

}  // namespace comflp::log
