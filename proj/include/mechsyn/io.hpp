// Text output helpers: fixed-format numbers and the CSV trace files.
#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechsyn/synthesis.hpp"

namespace mechsyn {

/// 9 significant digits, locale-independent.
inline std::string format_sig9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

/// Deterministic trace CSV: one row per outer iteration. Wall-clock time is
/// deliberately not a column so identical runs produce identical bytes.
inline std::string trace_csv(const std::vector<TraceRecord>& trace) {
    std::string s = "iteration,fitness,grad_norm,step_norm,accepted\n";
    for (const TraceRecord& r : trace) {
        s += std::to_string(r.iteration) + "," + format_sig9(r.fitness) + "," + format_sig9(r.grad_norm) +
             "," + format_sig9(r.step_norm) + "," + (r.accepted ? "1" : "0") + "\n";
    }
    return s;
}

/// Joint fitness trace of the two formulations; the shorter series is padded
/// with its final value.
inline std::string compare_csv(const std::vector<TraceRecord>& coords, const std::vector<TraceRecord>& dims) {
    auto accepted_series = [](const std::vector<TraceRecord>& t) {
        std::vector<double> f;
        for (const TraceRecord& r : t)
            if (r.accepted) f.push_back(r.fitness);
        return f;
    };
    const std::vector<double> fc = accepted_series(coords);
    const std::vector<double> fd = accepted_series(dims);
    const std::size_t n = std::max(fc.size(), fd.size());
    std::string s = "iteration,fitness_coordinates,fitness_dimensions\n";
    for (std::size_t i = 0; i < n; ++i) {
        const double c = fc.empty() ? 0.0 : fc[std::min(i, fc.size() - 1)];
        const double d = fd.empty() ? 0.0 : fd[std::min(i, fd.size() - 1)];
        s += std::to_string(i) + "," + format_sig9(c) + "," + format_sig9(d) + "\n";
    }
    return s;
}

}  // namespace mechsyn
