#include "qmr/log.hpp"

#include <cstdlib>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "qmr/error.hpp"

namespace qmr {

void set_log_level(const std::string& level) {
  spdlog::level::level_enum parsed;
  if (level == "error") {
    parsed = spdlog::level::err;
  } else if (level == "warn") {
    parsed = spdlog::level::warn;
  } else if (level == "info") {
    parsed = spdlog::level::info;
  } else if (level == "debug") {
    parsed = spdlog::level::debug;
  } else {
    throw Error(ErrorKind::config, "unknown log level '" + level + "' (expected error, warn, info or debug)");
  }
  // Diagnostics go to stderr so that reports written to stdout stay parseable.
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("qmr");
    spdlog::set_default_logger(l);
    return l;
  }();
  logger->set_level(parsed);
  spdlog::set_level(parsed);
}

void configure_logging() {
  const char* env = std::getenv("QMR_LOG_LEVEL");
  set_log_level(env && *env ? env : "warn");
}

}  // namespace qmr
