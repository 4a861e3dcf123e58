#include "tiltcal/rng.hpp"
#include "tiltcal/error.hpp"

#include <cmath>
#include <numbers>

namespace tiltcal {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::UnsupportedCapability: return "unsupported-capability";
    case ErrorKind::MissingValue: return "missing-value";
    case ErrorKind::DegenerateTarget: return "degenerate-target";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::EmptyCohort: return "empty-cohort";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::EmptySubgroup: return "empty-subgroup";
    case ErrorKind::NonIdentifiable: return "non-identifiable";
    case ErrorKind::UndefinedQuantile: return "undefined-quantile";
    case ErrorKind::Inconsistency: return "inconsistency";
    case ErrorKind::NonConvergence: return "non-convergence";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> counters) noexcept {
    std::uint64_t h = mix64(seed ^ 0x243F6A8885A308D3ULL);
    for (std::uint64_t c : counters) h = mix64(h ^ mix64(c + 0x9E3779B97F4A7C15ULL));
    return h;
}

double StreamRng::normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t StreamRng::below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; bias is < n / 2^64, irrelevant at our sizes.
    const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
    return static_cast<std::uint64_t>(m >> 64);
}

} // namespace tiltcal
