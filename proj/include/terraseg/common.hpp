#pragma once

#include <stdexcept>
#include <string>

namespace terraseg {

// Bad input data or arguments (CLI exit code 1).
struct validation_error : std::runtime_error {
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures during an otherwise valid run (CLI exit code 2).
struct pipeline_error : std::runtime_error {
    explicit pipeline_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace terraseg
