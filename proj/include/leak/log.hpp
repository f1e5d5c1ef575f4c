#pragma once

#include <functional>
#include <string>

namespace leak::log {

using Sink = std::function<void(const std::string&)>;

// Redirect warnings (tests install a collector); pass nullptr to restore the
// default stderr sink.
void set_warning_sink(Sink sink);

void warn(const std::string& message);

} // namespace leak::log
