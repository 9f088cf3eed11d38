#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace redge::cli {

/// "0..4" (inclusive range) or "0,3,7"; throws std::invalid_argument.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
/// Comma-separated numbers.
std::vector<double> parse_number_list(const std::string& text);

/// Standard normal quantile by bisection on the cdf.
double normal_quantile(double q);

/// Entry point behind the redge binary. Output goes to `out`, diagnostics to
/// `err`; the return value is the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace redge::cli
