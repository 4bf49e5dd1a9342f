#include "memadapt/log.hpp"

#include <iostream>

namespace memadapt {

namespace {
LogLevel g_level = LogLevel::kInfo;
}

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_warn(const std::string& msg) {
    if (g_level >= LogLevel::kWarn) std::cerr << "[warn] " << msg << '\n';
}

void log_info(const std::string& msg) {
    if (g_level >= LogLevel::kInfo) std::cerr << "[info] " << msg << '\n';
}

}  // namespace memadapt
