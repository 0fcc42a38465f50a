#pragma once

#include <stdexcept>
#include <string>

namespace facefit {

/// Raised when a render produces no covered pixels (or a fit hits one),
/// mapped to exit code 3 by the CLI.
class degenerate_render_error : public std::runtime_error {
public:
    explicit degenerate_render_error(const std::string& what) : std::runtime_error(what) {}
};

/// File/stream failures, mapped to exit code 4 by the CLI.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace facefit
