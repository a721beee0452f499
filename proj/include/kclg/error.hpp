#pragma once

#include <stdexcept>
#include <string>

namespace kclg {

// Exit-code families used by the CLI: validation/argument problems map to 2,
// budget problems to 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class SpecError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class BudgetError : public Error {
public:
    using Error::Error;
};

} // namespace kclg
