#pragma once

#include <functional>
#include <string_view>

namespace segloc {

using WarningHandler = std::function<void(std::string_view)>;

/// Emits a non-fatal diagnostic. The default handler writes to stderr.
void warn(std::string_view message);

/// Installs a handler and returns the previous one. Pass nullptr to silence.
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace segloc
