#pragma once

#include <string>

#include <json.hpp>

#include "tbm/core.hpp"
#include "tbm/twisted_algebra.hpp"

namespace tbm {

using json = nlohmann::ordered_json;

// Element layout:
//   {grid: {n, L, N, stride}, groupDim, kappa, cellWeight,
//    entries: [{x: [...], values: [[re, im], ...]}]}
// values are densities on the position grid (row-major, axis 0 slowest);
// masses are recovered as density * cellWeight.
inline json grid_to_json(const PositionGrid& g) {
    return json{{"n", g.dim}, {"L", g.period}, {"N", g.points}, {"stride", g.stride}};
}

inline PositionGrid grid_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("grid: expected an object");
    for (const auto& [k, v] : j.items())
        if (k != "n" && k != "L" && k != "N" && k != "stride") throw SchemaError("grid: unknown key '" + k + "'");
    PositionGrid g;
    try {
        g.dim = j.at("n").get<int>();
        g.period = j.at("L").get<std::vector<double>>();
        g.points = j.at("N").get<int>();
        g.stride = j.value("stride", 2);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("grid: ") + e.what());
    }
    g.validate();
    return g;
}

inline json element_to_json(const AlgebraElement& f, double kappa) {
    json entries = json::array();
    for (const auto& [x, m] : f.terms()) {
        json vals = json::array();
        for (cplx v : f.density(x)) vals.push_back(json::array({v.real(), v.imag()}));
        entries.push_back(json{{"x", x}, {"values", std::move(vals)}});
    }
    return json{{"grid", grid_to_json(f.grid())},
                {"groupDim", f.group_dim()},
                {"kappa", kappa},
                {"cellWeight", f.cell_weight()},
                {"entries", std::move(entries)}};
}

struct LoadedElement {
    AlgebraElement element;
    double kappa = 0.0;
};

inline LoadedElement element_from_json(const json& j) {
    if (!j.is_object()) throw SchemaError("element: expected an object");
    for (const auto& [k, v] : j.items())
        if (k != "grid" && k != "groupDim" && k != "kappa" && k != "cellWeight" && k != "entries")
            throw SchemaError("element: unknown key '" + k + "'");
    try {
        PositionGrid g = grid_from_json(j.at("grid"));
        int gd = j.value("groupDim", g.dim);
        LoadedElement out{AlgebraElement(g, gd), j.value("kappa", 0.0)};
        if (j.contains("cellWeight")) {
            double cw = j.at("cellWeight").get<double>();
            if (std::abs(cw - out.element.cell_weight()) > 1e-12 * out.element.cell_weight())
                throw ValidationError("element: cellWeight does not match the grid");
        }
        for (const auto& e : j.at("entries")) {
            GroupPoint x = e.at("x").get<GroupPoint>();
            const auto& vals = e.at("values");
            if (vals.size() != g.size()) throw SchemaError("element: value count differs from the grid size");
            GridFunction f(g.size());
            for (std::size_t i = 0; i < f.size(); ++i) {
                const auto& v = vals[i];
                if (!v.is_array() || v.size() != 2) throw SchemaError("element: values must be [re, im] pairs");
                f[i] = cplx(v[0].get<double>(), v[1].get<double>());
            }
            out.element.set_density(x, f);
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("element: ") + e.what());
    }
}

}  // namespace tbm
