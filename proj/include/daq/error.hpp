#ifndef DAQ_ERROR_HPP
#define DAQ_ERROR_HPP

#include <stdexcept>
#include <string>

namespace daq {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid static configuration (bad spec fields, u <= l, bad RunConfig keys).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
public:
    explicit ContractError(const std::string& msg) : Error("contract: " + msg) {}
};

// Tensor shape incompatibility; message names the op and the shapes involved.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

// File input/output failures (IDX parsing, checkpoints, CSV).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

// Training aborted (non-finite loss and similar runtime failures).
class TrainError : public Error {
public:
    explicit TrainError(const std::string& msg) : Error("train: " + msg) {}
};

} // namespace daq

#endif // DAQ_ERROR_HPP
