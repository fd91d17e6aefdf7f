#pragma once

#include <stdexcept>
#include <string>

namespace enkf {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user configuration (unknown keys, out-of-range knobs).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Shape/size disagreements between arguments.
class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class MemberCountMismatch : public DimensionMismatch {
public:
    using DimensionMismatch::DimensionMismatch;
};

class AlignmentError : public DimensionMismatch {
public:
    using DimensionMismatch::DimensionMismatch;
};

/// Failures caused by the numbers themselves.
class NumericalError : public Error {
public:
    using Error::Error;
};

class NonSymmetric : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SingularDataCovariance : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class TooFewMembers : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NonFinite : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class RankDeficientState : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class NotInFamily : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class GridUnderflow : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class SingularForward : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace enkf
