#pragma once

#include <string>

namespace qmr {

/// Sets the spdlog level from QMR_LOG_LEVEL (error, warn, info, debug).
/// Unset means warn. Throws config for any other value.
void configure_logging();

/// Same, from an explicit level name.
void set_log_level(const std::string& level);

}  // namespace qmr
