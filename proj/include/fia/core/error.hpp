#pragma once

#include <stdexcept>
#include <string>

namespace fia {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad tensor shape or value range at an API boundary.
struct InputError : Error {
    using Error::Error;
};

// Out-of-range scalar parameter (keep_ratio, t, n_steps, ...).
struct ParameterError : Error {
    using Error::Error;
};

// Unknown victim / split point / preset name.
struct RegistryError : Error {
    using Error::Error;
};

// Network built for a different feature shape than it was handed.
struct ConfigError : Error {
    using Error::Error;
};

// Persistence failures, each with a distinct subtype so callers can
// tell a stale file from a damaged one.
struct LoadError : Error {
    using Error::Error;
};
struct VersionError : LoadError {
    using LoadError::LoadError;
};
struct TruncationError : LoadError {
    using LoadError::LoadError;
};
struct ConsistencyError : LoadError {
    using LoadError::LoadError;
};
struct DigestError : LoadError {
    using LoadError::LoadError;
};

// Loss went non-finite at a known step.
struct TrainingError : Error {
    TrainingError(const std::string& msg, long step) : Error(msg + " (step " + std::to_string(step) + ")"), step(step) {}
    long step;
};

// Non-finite state inside an ODE solve.
struct NumericalError : Error {
    NumericalError(const std::string& msg, int step) : Error(msg + " (step " + std::to_string(step) + ")"), step(step) {}
    int step;
};

// A frozen component was mutated, or a recorded digest disagrees.
struct FreezeViolation : Error {
    using Error::Error;
};

// LVLM describer gave up after exhausting its retry budget.
struct DescriberError : Error {
    using Error::Error;
};

// One phase of an experiment failed; names the phase.
struct PhaseError : Error {
    PhaseError(const std::string& phase, const std::string& msg) : Error("phase '" + phase + "': " + msg), phase(phase) {}
    std::string phase;
};

}  // namespace fia
