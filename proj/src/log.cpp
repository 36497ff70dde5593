#include "fpx/log.hpp"

#include <spdlog/sinks/stdout_sinks.h>

namespace fpx {

spdlog::logger& logger() {
  static const std::shared_ptr<spdlog::logger> logger = [] {
    auto l = std::make_shared<spdlog::logger>("fpx", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%l] %v");
    return l;
  }();
  return *logger;
}

}  // namespace fpx
