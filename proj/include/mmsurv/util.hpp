#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace mmsurv {

// splitmix64; used to derive independent stream seeds from (seed, tag) pairs.
uint64_t splitmix64(uint64_t x);

// Combine a master seed with string/integer tags into a derived seed.
uint64_t derive_seed(uint64_t seed, std::string_view tag);
uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a);
uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b);

using Rng = std::mt19937_64;

// Unbiased integer in [0, n) via rejection sampling. n must be > 0.
uint64_t uniform_below(Rng& rng, uint64_t n);

double uniform_real(Rng& rng);             // [0, 1)
double normal(Rng& rng);                   // standard normal

// k distinct indices drawn uniformly without replacement from [0, n),
// returned sorted ascending. Partial Fisher-Yates.
std::vector<size_t> sample_without_replacement(size_t n, size_t k, uint64_t seed);

// Shortest round-trip decimal rendering of a double (for CSV/JSON output).
std::string fmt_double(double v);

// Minimal CSV helpers. Quoting is not needed for our fixed schemas; fields
// must not contain commas or newlines.
std::vector<std::string> split_csv_line(const std::string& line);
std::string join_csv(const std::vector<std::string>& fields);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace mmsurv
