#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <zlib.h>

#include "localnewton/rng.hpp"

namespace localnewton {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Row-major so that per-sample rows are contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParseError : public std::runtime_error {
public:
    ParseError(long line, const std::string& what)
        : std::runtime_error("parse error at line " + std::to_string(line) + ": " + what),
          line_(line) {}
    long line() const { return line_; }

private:
    long line_;
};

struct Dataset {
    RowMatrix features;  // n x d
    Vector labels;       // length n

    long n() const { return features.rows(); }
    long d() const { return features.cols(); }
};

// Disjoint shards of equal size s = floor(n / K); the n mod K leftover
// indices are dropped so every shard has identical size.
struct Partition {
    std::vector<std::vector<int>> shards;
    int worker_count = 0;
    int shard_size = 0;

    // All retained indices in ascending order (the set the algorithms optimize over).
    std::vector<int> union_indices() const {
        std::vector<int> all;
        all.reserve(static_cast<std::size_t>(worker_count) * shard_size);
        for (const auto& s : shards) all.insert(all.end(), s.begin(), s.end());
        std::sort(all.begin(), all.end());
        return all;
    }
};

namespace detail {

inline bool parse_double(std::string_view tok, double& out) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);  // from_chars rejects '+'
    if (tok.empty()) return false;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

inline bool parse_int(std::string_view tok, long& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

struct ParsedRow {
    double label;
    std::vector<std::pair<long, double>> entries;  // 1-based index, value
};

inline void parse_libsvm_line(std::string_view line, long line_no, std::optional<long> d_hint,
                              ParsedRow& row) {
    row.entries.clear();
    std::size_t pos = 0;
    auto next_token = [&](std::string_view& tok) -> bool {
        while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
        if (pos >= line.size()) return false;
        std::size_t start = pos;
        while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
        tok = line.substr(start, pos - start);
        return true;
    };

    std::string_view tok;
    if (!next_token(tok)) throw ParseError(line_no, "missing label");
    if (!parse_double(tok, row.label) || !std::isfinite(row.label))
        throw ParseError(line_no, "bad label '" + std::string(tok) + "'");

    long prev_index = 0;
    while (next_token(tok)) {
        std::size_t colon = tok.find(':');
        if (colon == std::string_view::npos)
            throw ParseError(line_no, "expected index:value, got '" + std::string(tok) + "'");
        long index = 0;
        double value = 0.0;
        if (!parse_int(tok.substr(0, colon), index) || index < 1)
            throw ParseError(line_no, "bad feature index in '" + std::string(tok) + "'");
        if (!parse_double(tok.substr(colon + 1), value) || !std::isfinite(value))
            throw ParseError(line_no, "bad feature value in '" + std::string(tok) + "'");
        if (index <= prev_index)
            throw ParseError(line_no, "feature indices must be strictly increasing");
        if (d_hint && index > *d_hint)
            throw ParseError(line_no, "feature index " + std::to_string(index) +
                                          " exceeds dimension " + std::to_string(*d_hint));
        row.entries.emplace_back(index, value);
        prev_index = index;
    }
}

}  // namespace detail

// Parses LIBSVM text: `<label> <idx>:<val> ...` per nonempty line, 1-based
// strictly increasing indices, absent entries zero. With normalize_labels,
// source labels <= 0 map to -1 and > 0 to +1 (so {0,1} and {-1,+1} sources
// both land on {-1,+1}). d is the max index seen unless d_hint is given.
inline Dataset parse_libsvm(std::string_view text, std::optional<long> d_hint = std::nullopt,
                            bool normalize_labels = true) {
    std::vector<detail::ParsedRow> rows;
    detail::ParsedRow row;
    long max_index = 0;
    long line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        bool blank = true;
        for (char c : line)
            if (c != ' ' && c != '\t') { blank = false; break; }
        if (blank) continue;
        detail::parse_libsvm_line(line, line_no, d_hint, row);
        if (!row.entries.empty()) max_index = std::max(max_index, row.entries.back().first);
        rows.push_back(row);
    }

    const long n = static_cast<long>(rows.size());
    const long d = d_hint ? *d_hint : max_index;
    Dataset ds;
    ds.features = RowMatrix::Zero(n, d);
    ds.labels = Vector::Zero(n);
    for (long i = 0; i < n; ++i) {
        double y = rows[i].label;
        ds.labels[i] = normalize_labels ? (y > 0.0 ? 1.0 : -1.0) : y;
        for (const auto& [index, value] : rows[i].entries)
            ds.features(i, index - 1) = value;
    }
    return ds;
}

// One line per sample, zero entries omitted, reals with 17 significant digits.
inline std::string serialize_libsvm(const Dataset& ds) {
    std::string out;
    char buf[64];
    for (long i = 0; i < ds.n(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", ds.labels[i]);
        out += buf;
        for (long j = 0; j < ds.d(); ++j) {
            double v = ds.features(i, j);
            if (v == 0.0) continue;
            std::snprintf(buf, sizeof(buf), " %ld:%.17g", j + 1, v);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

inline std::string read_file_maybe_gzip(const std::string& path) {
    const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
    if (gz) {
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw std::runtime_error("cannot open " + path);
        std::string out;
        char buf[1 << 16];
        int got;
        while ((got = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(got));
        const bool bad = got < 0;
        gzclose(f);
        if (bad) throw std::runtime_error("gzip read failure on " + path);
        return out;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Dataset load_libsvm_file(const std::string& path, std::optional<long> d_hint = std::nullopt,
                                bool normalize_labels = true) {
    return parse_libsvm(read_file_maybe_gzip(path), d_hint, normalize_labels);
}

// Replaces each row x by all d^2 ordered pairwise products x_i * x_j
// (row-major), e.g. covtype's d=54 becomes 2916.
inline Dataset expand_pairwise(const Dataset& ds, long dim_cap = 16384) {
    const long d = ds.d();
    if (d < 1) throw std::invalid_argument("expand_pairwise: empty feature dimension");
    const long d2 = d * d;
    if (d2 > dim_cap)
        throw std::invalid_argument("expand_pairwise: d^2 = " + std::to_string(d2) +
                                    " exceeds dimension cap " + std::to_string(dim_cap));
    Dataset out;
    out.labels = ds.labels;
    out.features = RowMatrix::Zero(ds.n(), d2);
    for (long i = 0; i < ds.n(); ++i)
        for (long a = 0; a < d; ++a)
            for (long b = 0; b < d; ++b)
                out.features(i, a * d + b) = ds.features(i, a) * ds.features(i, b);
    return out;
}

// Seeded Fisher-Yates shuffle of [0, n) split into K consecutive blocks of
// size s = floor(n / K); uniform sampling without replacement per shard.
inline Partition partition_uniform(long n, int K, std::uint64_t seed) {
    if (K < 1) throw std::invalid_argument("partition_uniform: K must be >= 1");
    if (n < K)
        throw std::invalid_argument("partition_uniform: n = " + std::to_string(n) +
                                    " is smaller than K = " + std::to_string(K));
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    fisher_yates_shuffle(perm, rng);

    const int s = static_cast<int>(n / K);
    Partition part;
    part.worker_count = K;
    part.shard_size = s;
    part.shards.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
        part.shards[k].assign(perm.begin() + static_cast<long>(k) * s,
                              perm.begin() + static_cast<long>(k + 1) * s);
    return part;
}

}  // namespace localnewton
