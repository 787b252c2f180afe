#include "ridgealign/log.hpp"

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

namespace ridgealign::logging {

namespace {

spdlog::logger& logger() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_logger_st("ridgealign");
    l->set_pattern("[%l] %v");
    spdlog::level::level_enum level = spdlog::level::warn;
    if (const char* env = std::getenv("RIDGEALIGN_LOG")) {
      const std::string v = env;
      if (v == "error") level = spdlog::level::err;
      else if (v == "warn") level = spdlog::level::warn;
      else if (v == "info") level = spdlog::level::info;
      else if (v == "debug") level = spdlog::level::debug;
    }
    l->set_level(level);
    return l;
  }();
  return *instance;
}

}  // namespace

void error(std::string_view msg) { logger().error("{}", msg); }
void warn(std::string_view msg) { logger().warn("{}", msg); }
void info(std::string_view msg) { logger().info("{}", msg); }
void debug(std::string_view msg) { logger().debug("{}", msg); }

}  // namespace ridgealign::logging
