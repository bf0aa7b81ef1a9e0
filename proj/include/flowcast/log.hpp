#pragma once

#include <string_view>

#include <nlohmann/json.hpp>

namespace flowcast {

/// One JSON object per line on stderr: {"event": ..., fields...}.
void log_event(std::string_view event, const nlohmann::json& fields = nlohmann::json::object());
void set_logging(bool enabled);

}  // namespace flowcast
