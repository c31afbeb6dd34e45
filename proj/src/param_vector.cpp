#include "flowiv/param_vector.hpp"

#include "flowiv/errors.hpp"

#include <cmath>

namespace flowiv {

std::size_t ParamVector::add_segment(const std::string& name, std::size_t size) {
    if (has_segment(name)) {
        throw ValidationError("duplicate parameter segment '" + name + "'");
    }
    const std::size_t offset = values_.size();
    values_.resize(offset + size, 0.0);
    segments_.push_back({name, offset, size});
    return offset;
}

const ParamVector::Segment& ParamVector::find(const std::string& name) const {
    for (const auto& s : segments_) {
        if (s.name == name) return s;
    }
    throw ValidationError("unknown parameter segment '" + name + "'");
}

std::span<double> ParamVector::segment(const std::string& name) {
    const Segment& s = find(name);
    return {values_.data() + s.offset, s.size};
}

std::span<const double> ParamVector::segment(const std::string& name) const {
    const Segment& s = find(name);
    return {values_.data() + s.offset, s.size};
}

bool ParamVector::has_segment(const std::string& name) const {
    for (const auto& s : segments_) {
        if (s.name == name) return true;
    }
    return false;
}

bool ParamVector::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::optional<std::string> ParamVector::first_nonfinite_segment() const {
    for (const auto& s : segments_) {
        for (std::size_t i = s.offset; i < s.offset + s.size; ++i) {
            if (!std::isfinite(values_[i])) return s.name;
        }
    }
    return std::nullopt;
}

void ParamVector::append(const ParamVector& other, const std::string& prefix) {
    for (const auto& s : other.segments_) {
        const std::size_t off = add_segment(prefix + s.name, s.size);
        for (std::size_t i = 0; i < s.size; ++i) {
            values_[off + i] = other.values_[s.offset + i];
        }
    }
}

} // namespace flowiv
