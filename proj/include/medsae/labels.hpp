#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "medsae/errors.hpp"

namespace medsae {

// One-hot / multi-hot label matrix. Entries are exactly 0 or 1, stored as
// doubles so correlation code consumes them directly.
struct LabelMatrix {
    std::size_t rows = 0; // samples
    std::size_t cols = 0; // labels
    std::vector<double> data;
    std::vector<std::string> label_names;

    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    out.push_back(field);
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

} // namespace detail

// Label CSV: UTF-8, first row comma-separated names, body rows 0/1 integers,
// no quoting.
inline LabelMatrix read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoFailure("read_labels: cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw EmptyHeader("read_labels: empty file");
    line = detail::strip_cr(line);
    if (line.empty()) throw EmptyHeader("read_labels: empty header row");

    LabelMatrix lm;
    lm.label_names = detail::split_csv_line(line);
    std::set<std::string> seen;
    for (const auto& name : lm.label_names) {
        if (name.empty()) throw EmptyHeader("read_labels: empty label name in header");
        if (!seen.insert(name).second) {
            throw DuplicateLabel("read_labels: duplicate label name '" + name + "'");
        }
    }
    lm.cols = lm.label_names.size();

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::strip_cr(line);
        if (line.empty()) continue; // allow trailing newline
        auto fields = detail::split_csv_line(line);
        if (fields.size() != lm.cols) {
            throw RaggedRow("read_labels: line " + std::to_string(lineno) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(lm.cols));
        }
        for (const auto& f : fields) {
            if (f == "0") {
                lm.data.push_back(0.0);
            } else if (f == "1") {
                lm.data.push_back(1.0);
            } else {
                throw NonBinaryEntry("read_labels: non-binary entry '" + f +
                                     "' at line " + std::to_string(lineno));
            }
        }
        ++lm.rows;
    }
    return lm;
}

inline void write_labels(const LabelMatrix& lm, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoFailure("write_labels: cannot open " + path.string());
    for (std::size_t j = 0; j < lm.cols; ++j) {
        if (j) out << ',';
        out << lm.label_names[j];
    }
    out << '\n';
    for (std::size_t i = 0; i < lm.rows; ++i) {
        for (std::size_t j = 0; j < lm.cols; ++j) {
            if (j) out << ',';
            out << (lm(i, j) != 0.0 ? '1' : '0');
        }
        out << '\n';
    }
    if (!out) throw IoFailure("write_labels: write failed for " + path.string());
}

} // namespace medsae
