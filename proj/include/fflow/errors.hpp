#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fflow {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on shapes or values was violated by the caller.
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Too few observations to form sample moments.
class DegenerateSample : public Error {
public:
    using Error::Error;
};

/// Finite-difference step was not strictly positive.
class InvalidStep : public Error {
public:
    using Error::Error;
};

/// Error model evaluated without a positive information scale.
class UndefinedScale : public Error {
public:
    using Error::Error;
};

/// The sample is too small for the requested precision.
class InsufficientSample : public Error {
public:
    InsufficientSample(const std::string &what, std::uint64_t required)
        : Error(what), required_n_(required) {}

    /// Per-offset sample size that would satisfy the precision guard.
    std::uint64_t required_n() const noexcept { return required_n_; }

private:
    std::uint64_t required_n_;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string &what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Malformed binary container.
class FormatError : public Error {
public:
    FormatError(const std::string &what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Standardization of image data is impossible (zero spread).
class StandardizationError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string &message) {
    if (!condition) {
        throw ContractViolation(message);
    }
}

}  // namespace fflow
