#pragma once

#include <spdlog/spdlog.h>

namespace fpx {

/// Library logger ("fpx"), writing to stderr by default. Replace its sinks
/// or change its level to redirect library warnings.
spdlog::logger& logger();

}  // namespace fpx
