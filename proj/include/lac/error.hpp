#pragma once

#include <stdexcept>
#include <string>

namespace lac {

// Base for every error the library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid user configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite values or a diverging optimisation (CLI exit code 3).
class DivergenceError : public Error {
public:
    using Error::Error;
};

}  // namespace lac
