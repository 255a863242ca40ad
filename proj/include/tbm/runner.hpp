#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbm/cocycle.hpp"
#include "tbm/core.hpp"
#include "tbm/lattice_hall.hpp"
#include "tbm/pairings.hpp"
#include "tbm/scattering.hpp"
#include "tbm/serialize.hpp"
#include "tbm/twisted_algebra.hpp"

namespace tbm {

inline constexpr const char* version = "0.1.0";
inline constexpr const char* report_schema = "tbm-report/1";

// ---- config access -------------------------------------------------------

// Read-only view of one config object that remembers its path and rejects
// keys outside the allowed set before anything is computed.
class ConfigBlock {
public:
    ConfigBlock(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw SchemaError(path_ + ": expected an object");
        for (const auto& [k, v] : j_.items())
            if (!allowed.count(k)) throw SchemaError(path_ + ": unknown key '" + k + "'");
    }

    bool has(const std::string& k) const { return j_.contains(k); }
    const json& raw(const std::string& k) const {
        if (!has(k)) throw SchemaError(path_ + ": missing required key '" + k + "'");
        return j_.at(k);
    }
    std::string where(const std::string& k) const { return path_ + "." + k; }

    double number(const std::string& k, std::optional<double> def = std::nullopt) const {
        if (!has(k)) {
            if (def) return *def;
            throw SchemaError(path_ + ": missing required key '" + k + "'");
        }
        const json& v = j_.at(k);
        if (!v.is_number()) throw SchemaError(where(k) + ": expected a number");
        return v.get<double>();
    }
    long integer(const std::string& k, std::optional<long> def = std::nullopt) const {
        if (!has(k)) {
            if (def) return *def;
            throw SchemaError(path_ + ": missing required key '" + k + "'");
        }
        const json& v = j_.at(k);
        if (!v.is_number_integer()) throw SchemaError(where(k) + ": expected an integer");
        return v.get<long>();
    }
    bool boolean(const std::string& k, bool def) const {
        if (!has(k)) return def;
        const json& v = j_.at(k);
        if (!v.is_boolean()) throw SchemaError(where(k) + ": expected true or false");
        return v.get<bool>();
    }
    std::string string(const std::string& k, std::optional<std::string> def = std::nullopt) const {
        if (!has(k)) {
            if (def) return *def;
            throw SchemaError(path_ + ": missing required key '" + k + "'");
        }
        const json& v = j_.at(k);
        if (!v.is_string()) throw SchemaError(where(k) + ": expected a string");
        return v.get<std::string>();
    }
    std::vector<double> numbers(const std::string& k, std::vector<double> def) const {
        if (!has(k)) return def;
        const json& v = j_.at(k);
        if (!v.is_array()) throw SchemaError(where(k) + ": expected an array of numbers");
        std::vector<double> out;
        for (const auto& x : v) {
            if (!x.is_number()) throw SchemaError(where(k) + ": expected an array of numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }
    ConfigBlock block(const std::string& k, std::set<std::string> allowed) const {
        static const json empty = json::object();
        return ConfigBlock(has(k) ? j_.at(k) : empty, where(k), std::move(allowed));
    }

private:
    const json& j_;
    std::string path_;
};

// ---- report --------------------------------------------------------------

struct Check {
    std::string name;
    json computed;
    json expected;
    double tolerance = 0.0;
    bool pass = false;
};

struct Report {
    std::string subcommand;
    json inputs = json::object();
    std::vector<Check> checks;
    json diagnostics = json::object();
    double seconds = 0.0;
    // extra CSV tables: file name -> (header, rows)
    std::vector<std::pair<std::string, std::pair<std::vector<std::string>, std::vector<std::vector<json>>>>> tables;

    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }

    void add(std::string name, json computed, json expected, double tol, bool pass) {
        checks.push_back({std::move(name), std::move(computed), std::move(expected), tol, pass});
    }
    // |computed - expected| <= tol
    void add_close(std::string name, double computed, double expected, double tol) {
        add(std::move(name), computed, expected, tol, std::isfinite(computed) && std::abs(computed - expected) <= tol);
    }

    json to_json() const {
        json cs = json::array();
        for (const auto& c : checks)
            cs.push_back(json{{"name", c.name},
                              {"computed", c.computed},
                              {"expected", c.expected},
                              {"tolerance", c.tolerance},
                              {"pass", c.pass}});
        return json{{"schema", report_schema},
                    {"version", version},
                    {"subcommand", subcommand},
                    {"inputs", inputs},
                    {"checks", std::move(cs)},
                    {"pass", all_pass()},
                    {"diagnostics", diagnostics},
                    {"timing", json{{"wall_seconds", seconds}}}};
    }
};

namespace detail {

inline std::string csv_cell(const json& v) {
    if (v.is_string()) {
        std::string s = v.get<std::string>();
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
        return q + "\"";
    }
    if (v.is_null()) return "";
    return v.dump();
}

inline void write_csv(const std::filesystem::path& file, const std::vector<std::string>& header,
                      const std::vector<std::vector<json>>& rows) {
    std::ofstream out(file);
    if (!out) throw InputError("cannot write " + file.string());
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << "\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << csv_cell(r[i]);
        out << "\n";
    }
}

}  // namespace detail

enum class OutputFormat { json, csv, both };

inline OutputFormat parse_format(const std::string& s) {
    if (s == "json") return OutputFormat::json;
    if (s == "csv") return OutputFormat::csv;
    if (s == "both") return OutputFormat::both;
    throw InputError("format must be json, csv or both");
}

inline void write_report(const Report& r, const std::filesystem::path& dir, OutputFormat fmt) {
    std::filesystem::create_directories(dir);
    if (fmt != OutputFormat::csv) {
        std::ofstream out(dir / "report.json");
        if (!out) throw InputError("cannot write " + (dir / "report.json").string());
        out << r.to_json().dump(2) << "\n";
    }
    if (fmt != OutputFormat::json) {
        std::vector<std::vector<json>> rows;
        for (const auto& c : r.checks) rows.push_back({c.name, c.computed, c.expected, c.tolerance, c.pass});
        detail::write_csv(dir / "checks.csv", {"name", "computed", "expected", "tolerance", "pass"}, rows);
        for (const auto& [name, t] : r.tables) detail::write_csv(dir / name, t.first, t.second);
    }
}

// ---- levinson --------------------------------------------------------------

inline RadialPotential read_table_potential(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InputError("potential table: cannot open " + file.string());
    std::vector<double> rs, vs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        double r, v;
        if (!(ss >> r >> v)) {
            if (rs.empty()) continue;  // header
            throw InputError("potential table: malformed row " + std::to_string(lineno));
        }
        rs.push_back(r);
        vs.push_back(v);
    }
    return RadialPotential::table(std::move(rs), std::move(vs));
}

inline RadialPotential make_potential(const json& j, const std::filesystem::path& base) {
    if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
        throw SchemaError("potential: expected an object with a string 'type'");
    std::string type = j.at("type").get<std::string>();
    if (type == "zero") {
        ConfigBlock b(j, "potential", {"type"});
        return RadialPotential::zero();
    }
    if (type == "square-well") {
        ConfigBlock b(j, "potential", {"type", "depth", "radius"});
        return RadialPotential::square_well(b.number("depth"), b.number("radius"));
    }
    if (type == "well-barrier") {
        ConfigBlock b(j, "potential", {"type", "depth", "radius", "barrier", "outer_radius"});
        return RadialPotential::well_barrier(b.number("depth"), b.number("radius"), b.number("barrier"), b.number("outer_radius"));
    }
    if (type == "exponential") {
        ConfigBlock b(j, "potential", {"type", "strength", "range", "cutoff"});
        return RadialPotential::exponential(b.number("strength"), b.number("range", 1.0), b.number("cutoff", 1e-12));
    }
    if (type == "yukawa-regularized") {
        ConfigBlock b(j, "potential", {"type", "strength", "mu", "rc", "cutoff"});
        return RadialPotential::yukawa_regularized(b.number("strength"), b.number("mu"), b.number("rc"), b.number("cutoff", 1e-12));
    }
    if (type == "table") {
        ConfigBlock b(j, "potential", {"type", "file"});
        std::filesystem::path f = b.string("file");
        if (f.is_relative()) f = base / f;
        return read_table_potential(f);
    }
    if (type == "channel-wells") {
        ConfigBlock b(j, "potential", {"type", "wells"});
        const json& ws = b.raw("wells");
        if (!ws.is_array() || ws.empty()) throw SchemaError("potential.wells: expected a nonempty array");
        std::map<int, std::pair<double, double>> wells;
        for (std::size_t i = 0; i < ws.size(); ++i) {
            ConfigBlock w(ws[i], "potential.wells[" + std::to_string(i) + "]", {"l", "depth", "radius"});
            int l = static_cast<int>(w.integer("l"));
            if (wells.count(l)) throw InputError("potential.wells: channel l=" + std::to_string(l) + " given twice");
            wells[l] = {w.number("depth"), w.number("radius")};
        }
        return RadialPotential::channel_square_wells(wells);
    }
    throw SchemaError("potential: unknown type '" + type +
                      "' (expected zero, square-well, well-barrier, exponential, yukawa-regularized, table, channel-wells)");
}

inline Report run_levinson(const json& cfg, const std::filesystem::path& base) {
    ConfigBlock root(cfg, "config", {"subcommand", "potential", "grid", "census", "tolerances", "martin", "expected_bound_states", "seed"});
    auto grid = root.block("grid", {"lambda_min", "lambda_max", "energies", "radial_step", "lmax", "lmax_cap", "born_tolerance",
                                    "max_phase_step", "max_curvature", "refine_rounds"});
    auto census = root.block("census", {"box_radius", "fd_step", "threshold", "radial_step"});
    auto tol = root.block("tolerances", {"levinson", "channel", "martin"});

    ScatteringOptions o;
    o.lambda_min = grid.number("lambda_min", o.lambda_min);
    o.lambda_max = grid.number("lambda_max", o.lambda_max);
    o.energies = static_cast<int>(grid.integer("energies", o.energies));
    o.radial_step = grid.number("radial_step", o.radial_step);
    o.lmax = static_cast<int>(grid.integer("lmax", o.lmax));
    o.lmax_cap = static_cast<int>(grid.integer("lmax_cap", o.lmax_cap));
    o.born_tolerance = grid.number("born_tolerance", o.born_tolerance);
    o.max_phase_step = grid.number("max_phase_step", o.max_phase_step);
    o.max_curvature = grid.number("max_curvature", o.max_curvature);
    o.refine_rounds = static_cast<int>(grid.integer("refine_rounds", o.refine_rounds));
    CensusOptions co;
    co.box_radius = census.number("box_radius", co.box_radius);
    co.fd_step = census.number("fd_step", co.fd_step);
    co.threshold = census.number("threshold", co.threshold);
    co.radial_step = census.number("radial_step", o.radial_step);
    double tol_lev = tol.number("levinson", 0.02);
    double tol_chan = tol.number("channel", 0.02);
    double tol_martin = tol.number("martin", 0.05);
    bool want_martin = root.boolean("martin", false);
    std::optional<long> expected_bound;
    if (root.has("expected_bound_states")) expected_bound = root.integer("expected_bound_states");

    RadialPotential v = make_potential(root.raw("potential"), base);
    if (want_martin && !v.is_local()) throw InputError("martin: the Martin form needs a local potential");

    Report r;
    r.subcommand = "levinson";
    r.inputs = json{{"potential", root.raw("potential")},
                    {"grid",
                     {{"lambda_min", o.lambda_min},
                      {"lambda_max", o.lambda_max},
                      {"energies", o.energies},
                      {"radial_step", o.radial_step},
                      {"lmax", o.lmax},
                      {"lmax_cap", o.lmax_cap},
                      {"born_tolerance", o.born_tolerance},
                      {"max_phase_step", o.max_phase_step},
                      {"max_curvature", o.max_curvature},
                      {"refine_rounds", o.refine_rounds}}},
                    {"census",
                     {{"box_radius", co.box_radius}, {"fd_step", co.fd_step}, {"threshold", co.threshold}, {"radial_step", co.radial_step}}},
                    {"tolerances", {{"levinson", tol_lev}, {"channel", tol_chan}, {"martin", tol_martin}}},
                    {"martin", want_martin}};
    if (expected_bound) r.inputs["expected_bound_states"] = *expected_bound;

    PhaseShiftTable t = build_phase_table(v, o);
    LevinsonReport rep = levinson_check(v, t, co);

    r.add("levinson_identity", rep.lhs / (2.0 * pi), rep.trace_p, tol_lev, rep.residual < tol_lev);
    double worst = 0.0;
    for (const auto& c : rep.channels) worst = std::max(worst, c.residual);
    r.add("channel_levinson", worst, 0.0, tol_chan, worst < tol_chan);
    if (expected_bound) r.add("expected_bound_states", rep.trace_p, *expected_bound, 0.0, rep.trace_p == *expected_bound);

    json chans = json::array();
    for (const auto& c : rep.channels)
        if (c.bound != 0 || std::abs(c.winding_over_pi) > 1e-3)
            chans.push_back(json{{"l", c.l}, {"bound", c.bound}, {"winding_over_pi", c.winding_over_pi}, {"residual", c.residual}});
    r.diagnostics = json{{"lhs", rep.lhs},
                         {"two_pi_trace_p", rep.rhs},
                         {"trace_p", rep.trace_p},
                         {"relative_residual", rep.residual},
                         {"quadrature", rep.integral.quadrature},
                         {"high_energy_tail", rep.integral.high_tail},
                         {"low_energy_tail_bound", rep.integral.low_tail_bound},
                         {"imag_residual", rep.integral.imag_residual},
                         {"lmax", rep.lmax},
                         {"lmax_truncated", rep.truncated},
                         {"energy_points", rep.energy_points},
                         {"refinements", t.refinements},
                         {"radial_step", t.radial_step},
                         {"bound_states_per_l", rep.census.counts},
                         {"bound_state_energies", rep.census.energies},
                         {"channels", chans},
                         {"provenance",
                          {{"trace", rep.integral.provenance.trace},
                           {"derivations", rep.integral.provenance.derivations},
                           {"normalization", rep.integral.provenance.normalization}}}};
    if (want_martin) {
        MartinResult m = martin_form(v, t, o.radial_step);
        r.add("martin_form", m.value / (2.0 * pi), rep.trace_p, tol_martin,
              std::abs(m.value / (2.0 * pi) - rep.trace_p) < tol_martin * std::max(1, rep.trace_p));
        r.diagnostics["martin"] = json{{"value", m.value},
                                       {"nu", m.nu},
                                       {"trace_integral", m.trace_integral},
                                       {"counterterm", m.counterterm},
                                       {"truncation_tail", m.truncation_tail},
                                       {"high_energy_remainder", m.high_energy_remainder}};
    }

    std::vector<std::string> header{"lambda", "time_delay"};
    for (int l = 0; l < t.channels(); ++l) header.push_back("delta_" + std::to_string(l));
    auto tau = time_delay(t);
    std::vector<std::vector<json>> rows;
    for (std::size_t i = 0; i < t.lambda.size(); ++i) {
        std::vector<json> row{t.lambda[i], tau[i]};
        for (int l = 0; l < t.channels(); ++l) row.push_back(t.delta[l][i]);
        rows.push_back(std::move(row));
    }
    r.tables.push_back({"phase_shifts.csv", {header, rows}});
    std::vector<std::vector<json>> crow;
    for (const auto& c : rep.channels)
        crow.push_back({c.l, c.bound, rep.census.node_counts[c.l], c.winding_over_pi, c.residual, c.delta_top});
    r.tables.push_back({"channels.csv", {{"l", "bound", "zero_energy_nodes", "winding_over_pi", "residual", "delta_lambda_max"}, crow}});
    return r;
}

// ---- bulk-edge -------------------------------------------------------------

// Continued-fraction neighbour p'/q' of p/q with |p q' - p' q| = 1 and q' >= factor * q.
inline std::pair<long, long> neighbour_flux(long p, long q, long factor = 10) {
    for (long q2 = factor * q; q2 < factor * q + 4 * q + 4; ++q2)
        for (long sgn : {1L, -1L}) {
            long num = p * q2 - sgn;
            if (num % q != 0) continue;
            long p2 = num / q;
            if (p2 < 0 || p2 >= q2 || std::gcd(p2, q2) != 1) continue;
            return {p2, q2};
        }
    throw InputError("no neighbouring flux found for the Streda check");
}

inline Report run_bulk_edge(const json& cfg, const std::filesystem::path&) {
    ConfigBlock root(cfg, "config", {"subcommand", "flux", "hopping", "bulk_grid", "width", "momenta", "torus", "gap_tolerance",
                                     "edge_window", "streda", "tolerances", "seed"});
    auto flux = root.block("flux", {"p", "q"});
    auto streda = root.block("streda", {"p", "q", "bulk_grid", "enabled"});
    auto tol = root.block("tolerances", {"nc_chern", "streda", "ids"});
    HofstadterSpec s;
    s.p = flux.integer("p");
    s.q = flux.integer("q");
    s.t = root.number("hopping", s.t);
    s.bulk_grid = static_cast<int>(root.integer("bulk_grid", s.bulk_grid));
    s.width = static_cast<int>(root.integer("width", s.width));
    s.momenta = static_cast<int>(root.integer("momenta", s.momenta));
    s.gap_tolerance = root.number("gap_tolerance", s.gap_tolerance);
    long torus = root.integer("torus", 30 * s.q);
    double window = root.number("edge_window", 0.05);
    double tol_nc = tol.number("nc_chern", 0.03);
    double tol_streda = tol.number("streda", 0.02);
    double tol_ids = tol.number("ids", 1e-3);
    bool streda_on = streda.boolean("enabled", true);
    s.validate();
    if (torus < s.q || torus % s.q != 0)
        throw InputError("torus " + std::to_string(torus) + " is not a multiple of the flux denominator q = " + std::to_string(s.q));
    if (!(window > 0.0 && window < 0.5)) throw InputError("edge_window must lie in (0, 0.5)");

    HofstadterSpec s2 = s;
    if (streda_on && s.q > 1) {
        if (streda.has("p") != streda.has("q")) throw SchemaError("config.streda: give both p and q or neither");
        std::pair<long, long> nb = streda.has("p") ? std::pair<long, long>{streda.integer("p"), streda.integer("q")} : neighbour_flux(s.p, s.q);
        s2.p = nb.first;
        s2.q = nb.second;
        s2.bulk_grid = static_cast<int>(streda.integer("bulk_grid", s2.q));
        s2.width = std::max<int>(s.width, static_cast<int>(s2.q));
        s2.momenta = std::max<int>(s.momenta, static_cast<int>(s2.q));
        s2.validate();
    }

    Report r;
    r.subcommand = "bulk-edge";
    r.inputs = json{{"flux", {{"p", s.p}, {"q", s.q}}},
                    {"hopping", s.t},
                    {"bulk_grid", s.bulk_grid},
                    {"width", s.width},
                    {"momenta", s.momenta},
                    {"torus", torus},
                    {"gap_tolerance", s.gap_tolerance},
                    {"edge_window", window},
                    {"streda", {{"enabled", streda_on && s.q > 1}, {"p", s2.p}, {"q", s2.q}, {"bulk_grid", s2.bulk_grid}}},
                    {"tolerances", {{"nc_chern", tol_nc}, {"streda", tol_streda}, {"ids", tol_ids}}}};

    BandData bulk = build_bulk(s);
    std::optional<EdgeSpectrum> es;
    int label_miss = 0, edge_miss = 0;
    double nc_worst = 0.0, streda_worst = 0.0, ids_worst = 0.0;
    json rows = json::array();
    json closed = json::array();
    json streda_notes = json::array();
    std::vector<std::vector<json>> csv;
    for (int g = 1; g < s.q; ++g) {
        if (!bulk.gap(g).open) {
            closed.push_back(g);
            continue;
        }
        if (!es) es = edge_spectrum(s);
        GapLabel lab = gap_label(s.p, s.q, g);
        int sigma = cumulative_chern(bulk, g);
        double idsv = ids(bulk, bulk.gap(g).center());
        EdgeFlow flow = edge_flow(*es, bulk, gap_interval(bulk.gap(g), window));
        double nc = chern_nc(s, g, static_cast<int>(torus)).value;
        json streda_res = nullptr;
        if (streda_on) {
            try {
                StredaResult sr = streda_check(s, s2, g);
                streda_res = sr.residual;
                streda_worst = std::max(streda_worst, sr.residual);
            } catch (const GapTrackingError& e) {
                streda_worst = std::numeric_limits<double>::infinity();
                streda_notes.push_back(json{{"gap", g}, {"error", e.what()}});
            }
        }
        if (sigma != lab.t) ++label_miss;
        if (flow.bottom != sigma) ++edge_miss;
        nc_worst = std::max(nc_worst, std::abs(nc - sigma) / std::max(1.0, std::abs(static_cast<double>(sigma))));
        ids_worst = std::max(ids_worst, std::abs(idsv - (lab.s + lab.t * s.flux())));
        rows.push_back(json{{"p", s.p},
                            {"q", s.q},
                            {"gap", g},
                            {"IDS", idsv},
                            {"sigmaH", sigma},
                            {"edgeFlow", flow.bottom},
                            {"ncChern", nc},
                            {"stredaResidual", streda_res},
                            {"label", {{"s", lab.s}, {"t", lab.t}}},
                            {"topEdgeFlow", flow.top}});
        csv.push_back({s.p, s.q, g, idsv, sigma, flow.bottom, nc, streda_res});
    }
    r.add("gap_labels", label_miss, 0, 0.0, label_miss == 0);
    r.add("bulk_edge", edge_miss, 0, 0.0, edge_miss == 0);
    r.add("nc_chern", nc_worst, 0.0, tol_nc, nc_worst < tol_nc);
    if (streda_on) r.add("streda", std::isfinite(streda_worst) ? json(streda_worst) : json(nullptr), 0.0, tol_streda, streda_worst < tol_streda);
    r.add("ids_gap_labelling", ids_worst, 0.0, tol_ids, ids_worst < tol_ids);
    r.diagnostics = json{{"gaps", rows}, {"closed_gaps", closed}, {"band_min", bulk.band_min}, {"band_max", bulk.band_max}};
    if (!streda_notes.empty()) r.diagnostics["streda_errors"] = streda_notes;
    r.tables.push_back({"gaps.csv", {{"p", "q", "gap", "IDS", "sigmaH", "edgeFlow", "ncChern", "stredaResidual"}, csv}});
    return r;
}

// ---- algebra-check ---------------------------------------------------------

namespace detail {

// Random element with dyadic values k/64, |k| <= 64. With a trivial cocycle
// every product is then exact in floating point.
template <class Rng>
AlgebraElement dyadic_element(const PositionGrid& grid, int group_dim, int support, int radius, Rng& rng) {
    AlgebraElement e(grid, group_dim);
    std::uniform_int_distribution<int> coord(-radius, radius);
    std::uniform_int_distribution<int> val(-64, 64);
    int guard = 0;
    while (static_cast<int>(e.support_size()) < support && guard++ < 1000) {
        GroupPoint x(group_dim);
        for (auto& c : x) c = coord(rng);
        if (e.mass(x)) continue;
        GridFunction m(grid.size());
        for (auto& v : m) {
            int re = val(rng);
            int im = val(rng);
            v = cplx(re / 64.0, im / 64.0);
        }
        e.set_mass(x, std::move(m));
    }
    return e;
}

inline double max_norm_inf(const AlgebraElement& a) {
    double m = 0.0;
    for (const auto& [x, f] : a.terms())
        for (cplx v : f) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace detail

inline MagneticField make_field(const ConfigBlock& b, int dim) {
    std::string type = b.string("type", "zero");
    if (type == "zero") return MagneticField::zero(dim);
    if (type == "planar") {
        if (dim != 2) throw InputError("field.planar needs a two-dimensional grid");
        return MagneticField::planar(b.number("b"));
    }
    if (type == "constant") {
        const json& m = b.raw("components");
        if (!m.is_array() || static_cast<int>(m.size()) != dim) throw SchemaError("field.components: expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " array");
        Mat c(dim, dim);
        for (int i = 0; i < dim; ++i) {
            if (!m[i].is_array() || static_cast<int>(m[i].size()) != dim) throw SchemaError("field.components: ragged matrix");
            for (int k = 0; k < dim; ++k) {
                if (!m[i][k].is_number()) throw SchemaError("field.components: expected numbers");
                c(i, k) = m[i][k].get<double>();
            }
        }
        return MagneticField::constant(c);
    }
    throw SchemaError("field: unknown type '" + type + "' (expected zero, planar, constant)");
}

inline Report run_algebra_check(const json& cfg, const std::filesystem::path&, std::optional<std::uint64_t> seed_override) {
    ConfigBlock root(cfg, "config", {"subcommand", "seed", "grid", "field", "kappas", "cases", "support", "radius", "cocycle_samples",
                                     "tolerances", "representation", "dump_elements"});
    auto gb = root.block("grid", {"dim", "length", "points", "stride"});
    auto fb = root.block("field", {"type", "b", "components"});
    auto tol = root.block("tolerances", {"cocycle", "algebra", "iterated", "kappa"});
    auto rb = root.block("representation", {"enabled", "p", "q", "points", "length", "cases"});
    std::uint64_t seed = seed_override ? *seed_override : static_cast<std::uint64_t>(root.integer("seed", 0));
    int dim = static_cast<int>(gb.integer("dim", 2));
    PositionGrid grid = PositionGrid::cube(dim, gb.number("length", 5.0), static_cast<int>(gb.integer("points", 8)),
                                           static_cast<int>(gb.integer("stride", 2)));
    MagneticField field = make_field(fb, dim);
    std::vector<double> kappas = root.numbers("kappas", {0.0, 0.5, 1.0});
    for (double k : kappas)
        if (k < 0.0 || k > 1.0) throw InputError("kappas must lie in [0, 1]");
    int cases = static_cast<int>(root.integer("cases", 20));
    int support = static_cast<int>(root.integer("support", 4));
    int radius = static_cast<int>(root.integer("radius", 2));
    int samples = static_cast<int>(root.integer("cocycle_samples", 200));
    double tol_cocycle = tol.number("cocycle", 1e-12);
    double tol_alg = tol.number("algebra", 1e-10);
    double tol_it = tol.number("iterated", 1e-10);
    double tol_kappa = tol.number("kappa", 1e-10);
    bool rep_on = rb.boolean("enabled", root.has("representation"));
    long rp = rb.integer("p", 1), rq = rb.integer("q", 3);
    int rpoints = static_cast<int>(rb.integer("points", 12));
    double rlen = rb.number("length", 6.0);
    int rcases = static_cast<int>(rb.integer("cases", 3));
    bool dump = root.boolean("dump_elements", false);
    if (cases < 1 || support < 1 || radius < 0 || samples < 1) throw InputError("cases, support, cocycle_samples must be positive");
    if (grid.size() > 4096) throw InputError("grid too large for the algebra check (at most 4096 points)");
    if (support > static_cast<long>(std::pow(2 * radius + 1, dim))) throw InputError("support exceeds the number of group points in the radius box");

    Report r;
    r.subcommand = "algebra-check";
    json field_echo = json{{"type", fb.string("type", "zero")}};
    if (fb.has("b")) field_echo["b"] = fb.number("b");
    if (fb.has("components")) field_echo["components"] = fb.raw("components");
    r.inputs = json{{"seed", seed},
                    {"grid", grid_to_json(grid)},
                    {"field", field_echo},
                    {"kappas", kappas},
                    {"cases", cases},
                    {"support", support},
                    {"radius", radius},
                    {"cocycle_samples", samples},
                    {"tolerances", {{"cocycle", tol_cocycle}, {"algebra", tol_alg}, {"iterated", tol_it}, {"kappa", tol_kappa}}},
                    {"representation", {{"enabled", rep_on}, {"p", rp}, {"q", rq}, {"points", rpoints}, {"length", rlen}, {"cases", rcases}}}};

    std::mt19937_64 rng(seed);
    CocycleEvaluator w(field);

    // cocycle relation and normalization on random real points
    std::uniform_real_distribution<double> u(-grid.period[0], grid.period[0]);
    auto rvec = [&] {
        Vec v(dim);
        for (int a = 0; a < dim; ++a) v[a] = u(rng);
        return v;
    };
    std::vector<CocycleSample> cs;
    double norm_worst = 0.0;
    for (int i = 0; i < samples; ++i) {
        CocycleSample c{rvec(), rvec(), rvec(), rvec()};
        Vec zero = Vec::Zero(dim);
        double t = u(rng);
        for (cplx v : {omega(field, c.q, c.x, zero), omega(field, c.q, zero, c.x), omega(field, c.q, c.x, Vec(-c.x)),
                       omega(field, c.q, c.x, Vec(t * c.x))})
            norm_worst = std::max(norm_worst, std::abs(v - 1.0));
        cs.push_back(std::move(c));
    }
    double rel = check_cocycle_relation(field, cs);
    r.add("cocycle_relation", rel, 0.0, tol_cocycle, rel < tol_cocycle || rel == 0.0);
    r.add("cocycle_normalization", norm_worst, 0.0, tol_cocycle, norm_worst < tol_cocycle || norm_worst == 0.0);

    double assoc = 0.0, inv = 0.0, it_prod = 0.0, it_inv = 0.0;
    json dumped = json::array();
    for (int c = 0; c < cases; ++c) {
        double k = kappas[static_cast<std::size_t>(c) % kappas.size()];
        auto f = detail::dyadic_element(grid, dim, support, radius, rng);
        auto g = detail::dyadic_element(grid, dim, support, radius, rng);
        auto h = detail::dyadic_element(grid, dim, support, radius, rng);
        auto fg = twisted_product(f, g, k, w);
        assoc = std::max(assoc, l1_distance(twisted_product(fg, h, k, w), twisted_product(f, twisted_product(g, h, k, w), k, w)));
        inv = std::max(inv, l1_distance(involution(fg, k), twisted_product(involution(g, k), involution(f, k), k, w)));
        if (dim >= 2) {
            it_prod = std::max(it_prod, l1_distance(to_iterated(fg, k, w), iterated_product(to_iterated(f, k, w), to_iterated(g, k, w), k, w)));
            it_inv = std::max(it_inv, l1_distance(to_iterated(involution(f, k), k, w), iterated_involution(to_iterated(f, k, w), k, w)));
        }
        if (dump && c == 0) {
            dumped.push_back(element_to_json(f, k));
            dumped.push_back(element_to_json(g, k));
        }
    }
    r.add("associativity", assoc, 0.0, tol_alg, assoc < tol_alg || assoc == 0.0);
    r.add("involution_antimultiplicative", inv, 0.0, tol_alg, inv < tol_alg || inv == 0.0);
    if (dim >= 2) {
        r.add("iterated_product", it_prod, 0.0, tol_it, it_prod < tol_it || it_prod == 0.0);
        r.add("iterated_involution", it_inv, 0.0, tol_it, it_inv < tol_it || it_inv == 0.0);
    }

    if (rep_on) {
        if (rpoints % rq != 0) throw InputError("representation: q must divide the torus side");
        PositionGrid rg = PositionGrid::cube(2, rlen, rpoints);
        CocycleEvaluator rw(field_for_flux(rg, rp, rq));
        double worst = 0.0, hom = 0.0;
        for (int c = 0; c < rcases; ++c) {
            auto g = detail::dyadic_element(rg, 2, support, radius, rng);
            auto f0 = g + involution(g, 0.0);
            auto f_half = change_kappa(f0, 0.0, 0.5);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e0(represent(f0, 0.0, rp, rq), Eigen::EigenvaluesOnly);
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e1(represent(f_half, 0.5, rp, rq), Eigen::EigenvaluesOnly);
            worst = std::max(worst, (e0.eigenvalues() - e1.eigenvalues()).cwiseAbs().maxCoeff());
            auto h = detail::dyadic_element(rg, 2, support, radius, rng);
            Eigen::MatrixXcd lhs = represent(twisted_product(g, h, 0.0, rw), 0.0, rp, rq);
            Eigen::MatrixXcd rhs = represent(g, 0.0, rp, rq) * represent(h, 0.0, rp, rq);
            hom = std::max(hom, (lhs - rhs).cwiseAbs().maxCoeff());
        }
        r.add("kappa_independence", worst, 0.0, tol_kappa, worst < tol_kappa);
        r.diagnostics["representation_homomorphism_defect"] = hom;
    }
    r.diagnostics["cocycle_samples"] = samples;
    r.diagnostics["kappa_schedule"] = "case c uses kappas[c mod |kappas|]";
    if (dump) r.diagnostics["sample_elements"] = dumped;
    std::vector<std::vector<json>> rows;
    for (const auto& c : r.checks) rows.push_back({c.name, c.computed});
    r.tables.push_back({"residuals.csv", {{"check", "residual"}, rows}});
    return r;
}

// ---- pairing ---------------------------------------------------------------

inline Report run_pairing(const json& cfg, const std::filesystem::path&) {
    ConfigBlock root(cfg, "config", {"subcommand", "family", "flux", "gap", "torus", "bulk_grid", "width", "momenta", "winding", "samples",
                                     "tolerance", "seed"});
    std::string family = root.string("family");
    Report r;
    r.subcommand = "pairing";
    auto provenance_json = [](const Provenance& p) {
        return json{{"trace", p.trace}, {"derivations", p.derivations}, {"normalization", p.normalization}};
    };
    if (family == "hofstadter-chern" || family == "edge-unitary") {
        auto flux = root.block("flux", {"p", "q"});
        HofstadterSpec s;
        s.p = flux.integer("p");
        s.q = flux.integer("q");
        s.bulk_grid = static_cast<int>(root.integer("bulk_grid", s.bulk_grid));
        s.width = static_cast<int>(root.integer("width", s.width));
        s.momenta = static_cast<int>(root.integer("momenta", s.momenta));
        int g = static_cast<int>(root.integer("gap", 1));
        long torus = root.integer("torus", 30 * s.q);
        double tol = root.number("tolerance", family == "edge-unitary" ? 0.05 : 0.03);
        s.validate();
        if (g < 1 || g >= s.q) throw InputError("gap must lie in 1 .. q-1");
        if (family == "hofstadter-chern" && torus % s.q != 0)
            throw InputError("torus " + std::to_string(torus) + " is not a multiple of the flux denominator q = " + std::to_string(s.q));
        r.inputs = json{{"family", family}, {"flux", {{"p", s.p}, {"q", s.q}}}, {"gap", g}, {"bulk_grid", s.bulk_grid}, {"tolerance", tol}};
        BandData bulk = build_bulk(s);
        if (!bulk.gap(g).open) throw DegeneracyError("gap " + std::to_string(g) + " is closed");
        int sigma = cumulative_chern(bulk, g);
        if (family == "hofstadter-chern") {
            r.inputs["torus"] = torus;
            auto nc = chern_nc(s, g, static_cast<int>(torus));
            r.add("chern_pairing", nc.value, sigma, tol, std::abs(nc.value - sigma) < tol * std::max(1, std::abs(sigma)));
            r.diagnostics = json{{"raw_pairing", {nc.pairing.real(), nc.pairing.imag()}},
                                 {"accuracy_warning", nc.accuracy_warning},
                                 {"provenance", provenance_json(nc.provenance)}};
        } else {
            r.inputs["width"] = s.width;
            r.inputs["momenta"] = s.momenta;
            auto eu = edge_unitary_pairing(s, gap_interval(bulk.gap(g)));
            r.add("edge_unitary_winding", eu.value, sigma, tol, std::abs(eu.value - sigma) < tol * std::max(1, std::abs(sigma)));
            r.diagnostics = json{{"imag_residual", eu.imag_residual}, {"unitarity_defect", eu.unitarity_defect},
                                 {"provenance", provenance_json(eu.provenance)}};
        }
        return r;
    }
    if (family == "scalar-winding") {
        long k = root.integer("winding");
        int n = static_cast<int>(root.integer("samples", 401));
        double tol = root.number("tolerance", 1e-6);
        if (n < 5) throw InputError("samples must be at least 5");
        r.inputs = json{{"family", family}, {"winding", k}, {"samples", n}, {"tolerance", tol}};
        std::vector<double> grid(n);
        std::vector<CMat> blocks;
        for (int i = 0; i < n; ++i) {
            grid[i] = static_cast<double>(i) / (n - 1);
            blocks.push_back(CMat::Constant(1, 1, std::polar(1.0, 2.0 * pi * static_cast<double>(k) * grid[i])));
        }
        auto wr = winding_number(MatrixFamily::path(grid, blocks), TraceDescriptor::energy_integral());
        // u(t) = exp(2 pi i k t); with W = pair_odd / (-2 pi i) a loop of degree k pairs to -k
        double expect = -static_cast<double>(k);
        r.add("winding_pairing", wr.value, expect, tol, std::abs(wr.value - expect) < tol);
        r.diagnostics = json{{"degree", k},
                             {"sign_convention", "W = pair_odd / (-2 pi i); degree k gives -k"},
                             {"imag_residual", wr.imag_residual},
                             {"provenance", provenance_json(wr.provenance)}};
        return r;
    }
    throw SchemaError("family: unknown pairing family '" + family + "' (expected hofstadter-chern, edge-unitary, scalar-winding)");
}

// ---- dispatch --------------------------------------------------------------

inline json load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InputError("cannot open config " + file.string());
    try {
        return json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("config is not valid JSON: ") + e.what());
    }
}

inline Report run_subcommand(const std::string& sub, const json& cfg, const std::filesystem::path& base,
                             std::optional<std::uint64_t> seed) {
    if (!cfg.is_object()) throw SchemaError("config: expected a JSON object");
    if (cfg.contains("subcommand") && (!cfg.at("subcommand").is_string() || cfg.at("subcommand").get<std::string>() != sub))
        throw SchemaError("config: subcommand field does not match '" + sub + "'");
    auto start = std::chrono::steady_clock::now();
    Report r;
    if (sub == "levinson")
        r = run_levinson(cfg, base);
    else if (sub == "bulk-edge")
        r = run_bulk_edge(cfg, base);
    else if (sub == "algebra-check")
        r = run_algebra_check(cfg, base, seed);
    else if (sub == "pairing")
        r = run_pairing(cfg, base);
    else
        throw InputError("unknown subcommand '" + sub + "'");
    if (seed && sub != "algebra-check") r.inputs["seed"] = *seed;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

// Exit codes: 0 all checks pass, 1 some check failed, 2 config or input
// problem, 3 computation refused (degeneracy, resolution, ...).
inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const SchemaError*>(&e) || dynamic_cast<const InputError*>(&e)) return 2;
    return 3;
}

}  // namespace tbm
