#include "flowcast/log.hpp"

#include <atomic>
#include <iostream>

namespace flowcast {
namespace {
std::atomic<bool> g_enabled{true};
}

void set_logging(bool enabled) { g_enabled = enabled; }

void log_event(std::string_view event, const nlohmann::json& fields) {
  if (!g_enabled) return;
  nlohmann::json line = {{"event", event}};
  for (const auto& [k, v] : fields.items()) line[k] = v;
  std::cerr << line.dump() << '\n';
}

}  // namespace flowcast
