#pragma once

#include "tiltcal/error.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace tiltcal {

/// Process exit codes.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;        // any other library error
inline constexpr int usage = 2;          // bad command line or unparsable input
inline constexpr int infeasible = 3;     // targets outside the attainable set
inline constexpr int nonconvergence = 4; // solver or chain did not converge
inline constexpr int io = 5;             // unreadable or unwritable files
inline constexpr int schema = 6;         // inputs do not match the covariate schema
} // namespace exit_code

int exit_code_for(ErrorKind kind);

/// Runs one command (args excludes the program name). Progress and tables
/// go to `out`, errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace tiltcal
