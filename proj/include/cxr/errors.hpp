#ifndef CXR_ERRORS_HPP
#define CXR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cxr {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents do not line up (channel mismatch, bad chain, ...).
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A scalar argument is outside its valid range.
struct ValueError : Error {
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

// Bad run configuration or dataset directory structure. CLI exit code 2.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Problems with data files themselves (decode failures, empty splits,
// unwritable outputs). CLI exit code 3.
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

} // namespace cxr

#endif
