#pragma once

#include <string>
#include <vector>

namespace flowiv {

struct Row {
    double z = 0.0;
    double a = 0.0;
    double y = 0.0;
};

// Observed sample of (instrument, treatment, outcome) triples.
struct Dataset {
    std::vector<Row> rows;

    std::size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }
};

// CSV with header "z,a,y". Malformed or non-finite rows raise ValidationError
// naming the line. Values are written with round-trip precision.
Dataset load_dataset_csv(const std::string& path);
void save_dataset_csv(const Dataset& d, const std::string& path);

// Shared CSV helpers.
std::vector<std::string> split_csv_line(const std::string& line);
double parse_csv_number(const std::string& field, const std::string& path, std::size_t line_no);

} // namespace flowiv
