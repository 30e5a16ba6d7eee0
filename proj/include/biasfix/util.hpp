#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace biasfix {

// Artifact floats are printed with 17 significant digits (round-trip exact).
inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

// Controlled by BF_LOG={error,info,debug}; defaults to error.
LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);
void log_error(const std::string& msg);

}  // namespace biasfix
