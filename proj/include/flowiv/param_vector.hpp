#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowiv {

// Flat storage for trainable parameters, addressed through named segments.
// Segments are contiguous, disjoint, and together cover the whole vector.
class ParamVector {
public:
    struct Segment {
        std::string name;
        std::size_t offset = 0;
        std::size_t size = 0;
    };

    ParamVector() = default;

    // Appends a zero-initialized segment; returns its offset.
    std::size_t add_segment(const std::string& name, std::size_t size);

    std::span<double> segment(const std::string& name);
    std::span<const double> segment(const std::string& name) const;
    bool has_segment(const std::string& name) const;

    const std::vector<Segment>& segments() const { return segments_; }
    std::size_t size() const { return values_.size(); }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    bool all_finite() const;
    // Name of the first segment containing a non-finite entry, if any.
    std::optional<std::string> first_nonfinite_segment() const;

    // Appends every segment of `other` under "<prefix><name>".
    void append(const ParamVector& other, const std::string& prefix = "");

    bool operator==(const ParamVector& other) const {
        return values_ == other.values_;
    }

private:
    const Segment& find(const std::string& name) const;

    std::vector<double> values_;
    std::vector<Segment> segments_;
};

} // namespace flowiv
