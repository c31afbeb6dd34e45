#include "flowiv/dataset.hpp"

#include "flowiv/errors.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace flowiv {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    for (auto& f : fields) {
        while (!f.empty() && std::isspace(static_cast<unsigned char>(f.front()))) f.erase(f.begin());
        while (!f.empty() && std::isspace(static_cast<unsigned char>(f.back()))) f.pop_back();
    }
    return fields;
}

double parse_csv_number(const std::string& field, const std::string& path,
                        std::size_t line_no) {
    double v = 0.0;
    const auto* begin = field.data();
    const auto* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw ValidationError(path + ": line " + std::to_string(line_no) +
                              ": cannot parse number '" + field + "'");
    }
    if (!std::isfinite(v)) {
        throw ValidationError(path + ": line " + std::to_string(line_no) +
                              ": non-finite value '" + field + "'");
    }
    return v;
}

Dataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");

    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
    ++line_no;
    auto header = split_csv_line(line);
    if (header.size() != 3 || header[0] != "z" || header[1] != "a" || header[2] != "y") {
        throw ValidationError(path + ": expected header 'z,a,y'");
    }

    Dataset d;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 3) {
            throw ValidationError(path + ": line " + std::to_string(line_no) +
                                  ": expected 3 fields, got " + std::to_string(fields.size()));
        }
        Row r;
        r.z = parse_csv_number(fields[0], path, line_no);
        r.a = parse_csv_number(fields[1], path, line_no);
        r.y = parse_csv_number(fields[2], path, line_no);
        d.rows.push_back(r);
    }
    if (d.rows.empty()) throw ValidationError(path + ": no data rows");
    return d;
}

void save_dataset_csv(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << "z,a,y\n";
    char buf[96];
    for (const Row& r : d.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", r.z, r.a, r.y);
        out << buf;
    }
}

} // namespace flowiv
