#pragma once

#include <string_view>

namespace ridgealign::logging {

/// Level comes from RIDGEALIGN_LOG (error|warn|info|debug), default warn.
/// Messages go to stderr.
void error(std::string_view msg);
void warn(std::string_view msg);
void info(std::string_view msg);
void debug(std::string_view msg);

}  // namespace ridgealign::logging
