#pragma once

#include <string>

// Thin front for spdlog. It lives in its own translation unit because libtorch ships a
// newer fmt whose headers shadow the one spdlog was built against.
namespace hyperedit::log {

void debug(const std::string& message);
void info(const std::string& message);
void warn(const std::string& message);
void error(const std::string& message);

/// "debug", "info", "warn", "error" or "off".
void set_level(const std::string& level);

/// printf-style formatting into a std::string.
std::string format(const char* fmt, ...) __attribute__((format(printf, 1, 2)));

}  // namespace hyperedit::log
