#pragma once

#include <stdexcept>
#include <string>

namespace cmaf {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values produced by a numerical kernel.
class NumericFailure : public Error {
public:
    using Error::Error;
};

/// theta + H(phi) is not positive definite somewhere on the grid.
class NotKahler : public Error {
public:
    NotKahler(const std::string& what, std::size_t point, double min_eigenvalue)
        : Error(what), point_(point), min_eigenvalue_(min_eigenvalue) {}
    std::size_t point() const { return point_; }
    double min_eigenvalue() const { return min_eigenvalue_; }

private:
    std::size_t point_;
    double min_eigenvalue_;
};

class CertificateFailed : public Error {
public:
    CertificateFailed(const std::string& inequality, double time, double margin)
        : Error("certificate failed: " + inequality + " at t=" + std::to_string(time) +
                " (margin " + std::to_string(margin) + ")"),
          inequality_(inequality), time_(time), margin_(margin) {}
    const std::string& inequality() const { return inequality_; }
    double time() const { return time_; }
    double margin() const { return margin_; }

private:
    std::string inequality_;
    double time_;
    double margin_;
};

class NewtonDiverged : public Error {
public:
    NewtonDiverged(const std::string& what, double last_residual)
        : Error(what), last_residual_(last_residual) {}
    double last_residual() const { return last_residual_; }

private:
    double last_residual_;
};

class ConeExit : public Error {
public:
    ConeExit(const std::string& what, double time) : Error(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_;
};

class RepairTooLarge : public Error {
public:
    using Error::Error;
};

class Unresolvable : public Error {
public:
    using Error::Error;
};

class MonotonicityViolated : public Error {
public:
    MonotonicityViolated(const std::string& what, double time, std::size_t point, double magnitude)
        : Error(what), time_(time), point_(point), magnitude_(magnitude) {}
    double time() const { return time_; }
    std::size_t point() const { return point_; }
    double magnitude() const { return magnitude_; }

private:
    double time_;
    std::size_t point_;
    double magnitude_;
};

class HorizonTooLong : public Error {
public:
    using Error::Error;
};

/// Grids, schedules or backends of two inputs do not match.
class MismatchedDiscretization : public Error {
public:
    using Error::Error;
};

/// A check needs snapshot times that the trajectory does not contain.
class MissingSnapshots : public Error {
public:
    using Error::Error;
};

/// An operation's documented precondition does not hold for its inputs.
class PreconditionFailed : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace cmaf
