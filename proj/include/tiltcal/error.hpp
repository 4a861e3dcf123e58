#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tiltcal {

enum class ErrorKind {
    Precondition,
    UnsupportedCapability,
    MissingValue,
    DegenerateTarget,
    DegenerateInput,
    EmptyCohort,
    Infeasible,
    Divergence,
    EmptySubgroup,
    NonIdentifiable,
    UndefinedQuantile,
    Inconsistency,
    NonConvergence,
    Parse,
    Schema,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. `stage()` is filled in by the
/// pipeline when an error crosses a stage boundary ("stage1", "stage2", ...).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::string stage = {})
        : std::runtime_error(message), kind_(kind), stage_(std::move(stage)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& stage() const noexcept { return stage_; }

    Error with_stage(std::string stage) const { return Error(kind_, what(), std::move(stage)); }

private:
    ErrorKind kind_;
    std::string stage_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorKind::Precondition, message);
}

} // namespace tiltcal
