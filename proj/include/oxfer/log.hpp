#pragma once

#include <cstdarg>
#include <cstdio>

namespace oxfer {

enum class LogLevel : int { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

LogLevel log_threshold();
void set_log_threshold(LogLevel level);

void log_message(LogLevel level, const char* fmt, ...) __attribute__((format(printf, 2, 3)));

#define OXFER_ERROR(...) ::oxfer::log_message(::oxfer::LogLevel::kError, __VA_ARGS__)
#define OXFER_WARN(...) ::oxfer::log_message(::oxfer::LogLevel::kWarn, __VA_ARGS__)
#define OXFER_INFO(...) ::oxfer::log_message(::oxfer::LogLevel::kInfo, __VA_ARGS__)
#define OXFER_DEBUG(...) ::oxfer::log_message(::oxfer::LogLevel::kDebug, __VA_ARGS__)

}  // namespace oxfer
