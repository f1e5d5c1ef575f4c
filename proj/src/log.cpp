#include "leak/log.hpp"

#include <iostream>
#include <utility>

namespace leak::log {

namespace {

Sink& sink_ref() {
    static Sink sink;
    return sink;
}

} // namespace

void set_warning_sink(Sink sink) { sink_ref() = std::move(sink); }

void warn(const std::string& message) {
    if (sink_ref()) {
        sink_ref()(message);
    } else {
        std::cerr << "[leak] warning: " << message << '\n';
    }
}

} // namespace leak::log
