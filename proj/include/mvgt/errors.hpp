#pragma once

#include <stdexcept>
#include <string>

namespace mvgt {

// Error taxonomy shared by every module. The CLI maps these onto stable
// exit codes: ConfigError -> 2, DataError -> 3, NumericError -> 4.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/contract violations inside the tensor engine. These indicate a
// caller bug rather than bad user input, so they get their own type.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mvgt
