#ifndef POLYFOLIO_ERRORS_HPP
#define POLYFOLIO_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace polyfolio {

/// Bad input: malformed files, unknown ids, violated preconditions.
/// The CLI maps these to exit code 2.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Arithmetic breakdown: singular systems, non-finite activations,
/// diverging training. The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConstantSeries : public NumericalError {
public:
    ConstantSeries() : NumericalError("series has zero standard deviation") {}
};

class SingularDesign : public NumericalError {
public:
    SingularDesign() : NumericalError("singular Hermite design with lambda = 0") {}
};

class ZeroVolatility : public NumericalError {
public:
    ZeroVolatility() : NumericalError("excess returns have zero variance") {}
};

class DomainError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class InsufficientHistory : public InputError {
public:
    explicit InsufficientHistory(std::size_t n)
        : InputError("factor history of " + std::to_string(n) + " points is shorter than 20") {}
};

class DegenerateGrid : public NumericalError {
public:
    DegenerateGrid() : NumericalError("quantile grid has all theta values equal") {}
};

class NoRelevantFactors : public NumericalError {
public:
    NoRelevantFactors() : NumericalError("relevant factor set is empty") {}
};

} // namespace polyfolio

#endif
