#pragma once

#include <sstream>
#include <string>

namespace comflp::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

// Reads COMFLP_LOG (quiet|warn|info|debug) once; defaults to warn.
Level level();
void set_level(Level lvl);

void write(Level lvl, const std::string& msg);

template <typename... Args>
void warn(Args&&... args) {
    if (level() < Level::warn)
        return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::warn, os.str());
}

template <typename... Args>
void info(Args&&... args) {
    if (level() < Level::info)
        return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::info, os.str());
}

template <typename... Args>
void debug(Args&&... args) {
    if (level() < Level::debug)
        return;
    std::ostringstream os;
    (os << ... << args);
    write(Level::debug, os.str());
}

}  // namespace comflp::log
