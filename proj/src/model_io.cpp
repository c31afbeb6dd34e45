#include "flowiv/errors.hpp"
#include "flowiv/flow.hpp"

#include <json.hpp>

#include <fstream>

namespace flowiv {

namespace {

using nlohmann::json;

json standardizer_to_json(const Standardizer& s) {
    return json{{"mean", s.mean}, {"sd", s.sd}};
}

Standardizer standardizer_from_json(const json& j) {
    Standardizer s;
    s.mean = j.at("mean").get<double>();
    s.sd = j.at("sd").get<double>();
    return s;
}

json flow_params_to_json(const ConditionalFlow& f) {
    json out = json::object();
    for (const auto& seg : f.params().segments()) {
        const auto span = f.params().segment(seg.name);
        out[seg.name] = std::vector<double>(span.begin(), span.end());
    }
    return out;
}

void flow_params_from_json(ConditionalFlow& f, const json& j) {
    for (const auto& seg : f.params().segments()) {
        const auto vals = j.at(seg.name).get<std::vector<double>>();
        if (vals.size() != seg.size) {
            throw ValidationError("model file: segment '" + seg.name +
                                  "' has wrong length");
        }
        auto dst = f.params().segment(seg.name);
        std::copy(vals.begin(), vals.end(), dst.begin());
    }
}

} // namespace

void save_model(const ScmFlowModel& m, const std::string& path) {
    const FlowArchitecture& arch = m.h_z.architecture();
    json j;
    j["format"] = "flowiv-model";
    j["version"] = 1;
    j["architecture"] = {
        {"layers", arch.layers},
        {"bins", arch.spline.bins},
        {"bound", arch.spline.bound},
        {"min_bin_frac", arch.spline.min_bin_frac},
        {"min_derivative", arch.spline.min_derivative},
        {"cond_width", arch.cond_width},
        {"cond_hidden", arch.cond_hidden},
    };
    j["standardize"] = {
        {"z", standardizer_to_json(m.std_z)},
        {"a", standardizer_to_json(m.std_a)},
        {"y", standardizer_to_json(m.std_y)},
    };
    j["rho_raw"] = m.noise.rho_raw();
    j["params"] = {
        {"hz", flow_params_to_json(m.h_z)},
        {"ha", flow_params_to_json(m.h_a)},
        {"hy", flow_params_to_json(m.h_y)},
    };

    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << j.dump(1) << "\n";
}

ScmFlowModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ValidationError("model file '" + path + "': " + e.what());
    }
    if (j.value("format", "") != "flowiv-model") {
        throw ValidationError("model file '" + path + "': unrecognized format");
    }

    FlowArchitecture arch;
    const json& ja = j.at("architecture");
    arch.layers = ja.at("layers").get<int>();
    arch.spline.bins = ja.at("bins").get<int>();
    arch.spline.bound = ja.at("bound").get<double>();
    arch.spline.min_bin_frac = ja.at("min_bin_frac").get<double>();
    arch.spline.min_derivative = ja.at("min_derivative").get<double>();
    arch.cond_width = ja.at("cond_width").get<int>();
    arch.cond_hidden = ja.at("cond_hidden").get<int>();

    Rng rng(0);
    ScmFlowModel m = ScmFlowModel::identity_model(arch, rng);
    m.std_z = standardizer_from_json(j.at("standardize").at("z"));
    m.std_a = standardizer_from_json(j.at("standardize").at("a"));
    m.std_y = standardizer_from_json(j.at("standardize").at("y"));
    m.noise = CorrelatedGaussian::from_raw(j.at("rho_raw").get<double>());
    flow_params_from_json(m.h_z, j.at("params").at("hz"));
    flow_params_from_json(m.h_a, j.at("params").at("ha"));
    flow_params_from_json(m.h_y, j.at("params").at("hy"));
    return m;
}

} // namespace flowiv
