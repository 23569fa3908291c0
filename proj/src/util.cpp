#include "mmsurv/util.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mmsurv/errors.hpp"

namespace mmsurv {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {
uint64_t hash_tag(std::string_view tag) {
    // FNV-1a
    uint64_t h = 1469598103934665603ULL;
    for (char ch : tag) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ULL;
    }
    return h;
}
}  // namespace

uint64_t derive_seed(uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ splitmix64(hash_tag(tag)));
}

uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a) {
    return splitmix64(derive_seed(seed, tag) ^ splitmix64(a + 0x7f4a7c15ULL));
}

uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t a, uint64_t b) {
    return splitmix64(derive_seed(seed, tag, a) ^ splitmix64(b + 0x51afd7edULL));
}

uint64_t uniform_below(Rng& rng, uint64_t n) {
    if (n == 0) throw ContractError("uniform_below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = rng();
    while (v >= limit) v = rng();
    return v % n;
}

double uniform_real(Rng& rng) {
    // 53 random bits -> [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double normal(Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

std::vector<size_t> sample_without_replacement(size_t n, size_t k, uint64_t seed) {
    if (k > n) throw ContractError("sample_without_replacement: k > n");
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    Rng rng(seed);
    for (size_t i = 0; i < k; ++i) {
        const size_t j = i + static_cast<size_t>(uniform_below(rng, n - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<size_t> out(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(out.begin(), out.end());
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string join_csv(const std::vector<std::string>& fields) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += fields[i];
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << content;
}

}  // namespace mmsurv
