#include "proxmmr/io.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "proxmmr/error.hpp"

namespace proxmmr::io {

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
    double v = 0.0;
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) throw ParseError("not a number: '" + text + "'");
    return v;
}

namespace {

void write_metadata(std::ostream& out, const std::string& metadata) {
    if (!metadata.empty()) out << "# " << metadata << '\n';
}

void write_row(std::ostream& out, std::span<const double> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out << ',';
        out << format_double(values[i]);
    }
}

std::string fixed(double v, int precision = 2) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
    return std::string(buf, res.ptr);
}

}  // namespace

void write_dataset_csv(std::ostream& out, const scm::Dataset& data, scm::Experiment experiment,
                       const std::string& metadata) {
    data.validate();
    write_metadata(out, metadata);
    if (experiment == scm::Experiment::Demand) {
        out << "u,z1,z2,w,a,y\n";
    } else {
        out << "u,z_scale,z_rot,z_posx";
        for (std::size_t j = 0; j < data.w.cols(); ++j) out << ",w_px_" << j;
        for (std::size_t j = 0; j < data.a.cols(); ++j) out << ",a_px_" << j;
        out << ",y\n";
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << format_double(data.u[i]) << ',';
        write_row(out, data.z.row(i));
        out << ',';
        write_row(out, data.w.row(i));
        out << ',';
        write_row(out, data.a.row(i));
        out << ',' << format_double(data.y[i]) << '\n';
    }
}

void write_truth_csv(std::ostream& out, const scm::GroundTruth& truth, scm::Experiment experiment,
                     const std::string& metadata) {
    write_metadata(out, metadata);
    out << (experiment == scm::Experiment::Demand ? "a_value" : "a_index") << ",ey_a,mc_se\n";
    for (std::size_t i = 0; i < truth.mean.size(); ++i) {
        out << format_double(truth.grid[i]) << ',' << format_double(truth.mean[i]) << ','
            << format_double(truth.se[i]) << '\n';
    }
}

namespace {

constexpr const char* kRecordsHeader = "method,n_train,var_z,var_w,replicate,seed,c_mse,wall_s,status";

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

template <class T>
T parse_unsigned(const std::string& text) {
    T v{};
    const char* end = text.data() + text.size();
    const auto res = std::from_chars(text.data(), end, v);
    if (res.ec != std::errc() || res.ptr != end) throw ParseError("not an unsigned integer: '" + text + "'");
    return v;
}

}  // namespace

void write_records_csv(std::ostream& out, std::span<const eval::EvalRecord> records) {
    out << kRecordsHeader << '\n';
    for (const auto& r : records) {
        out << estimators::to_string(r.method) << ',' << r.n_train << ',' << format_double(r.var_z)
            << ',' << format_double(r.var_w) << ',' << r.replicate << ',' << r.seed << ','
            << (r.c_mse ? format_double(*r.c_mse) : "") << ',' << format_double(r.wall_s) << ','
            << eval::to_string(r.status) << '\n';
    }
}

std::vector<eval::EvalRecord> read_records_csv(std::istream& in) {
    std::vector<eval::EvalRecord> records;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!header_seen) {
            if (line != kRecordsHeader) {
                throw ParseError("line " + std::to_string(line_no) + ": expected header '" +
                                 kRecordsHeader + "'");
            }
            header_seen = true;
            continue;
        }
        try {
            const auto f = split(line);
            if (f.size() != 9) throw ParseError("expected 9 fields, found " + std::to_string(f.size()));
            eval::EvalRecord r;
            r.method = estimators::parse_method(f[0]);
            r.n_train = parse_unsigned<std::size_t>(f[1]);
            r.var_z = parse_double(f[2]);
            r.var_w = parse_double(f[3]);
            r.replicate = parse_unsigned<std::size_t>(f[4]);
            r.seed = parse_unsigned<std::uint64_t>(f[5]);
            if (!f[6].empty()) r.c_mse = parse_double(f[6]);
            r.wall_s = parse_double(f[7]);
            r.status = eval::parse_status(f[8]);
            if ((r.status == eval::Status::Ok) != r.c_mse.has_value()) {
                throw ParseError("c_mse must be present exactly for ok records");
            }
            records.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!header_seen) throw ParseError("line " + std::to_string(line_no + 1) + ": missing header");
    return records;
}

void write_summary_csv(std::ostream& out, std::span<const eval::SummaryRow> rows) {
    out << "method,n_train,var_z,var_w,median,iqr,count,failures\n";
    for (const auto& r : rows) {
        out << estimators::to_string(r.method) << ',' << r.n_train << ',' << format_double(r.var_z)
            << ',' << format_double(r.var_w) << ',' << (r.median ? format_double(*r.median) : "")
            << ',' << (r.iqr ? format_double(*r.iqr) : "") << ',' << r.count << ',' << r.failures
            << '\n';
    }
}

std::string boxplot_svg(std::span<const eval::EvalRecord> records) {
    using Key = std::tuple<estimators::Method, std::size_t, double, double>;
    std::map<Key, std::vector<double>> groups;
    for (const auto& r : records) {
        if (r.status == eval::Status::Ok && r.c_mse) {
            groups[{r.method, r.n_train, r.var_z, r.var_w}].push_back(*r.c_mse);
        }
    }

    constexpr double kLeft = 70, kTop = 20, kPlotH = 300, kBoxW = 40, kStep = 110;
    const double width = kLeft + kStep * static_cast<double>(std::max<std::size_t>(groups.size(), 1)) + 20;
    const double height = kTop + kPlotH + 70;

    double lo = 0.0, hi = 1.0;
    bool first = true;
    for (const auto& [key, values] : groups) {
        const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = first ? *mn : std::min(lo, *mn);
        hi = first ? *mx : std::max(hi, *mx);
        first = false;
    }
    if (hi <= lo) hi = lo + 1.0;
    const auto y_of = [&](double v) { return kTop + kPlotH * (hi - v) / (hi - lo); };

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(width) << "\" height=\""
        << fixed(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
        << "<rect x=\"0\" y=\"0\" width=\"" << fixed(width) << "\" height=\"" << fixed(height)
        << "\" fill=\"white\"/>\n"
        << "<line x1=\"" << fixed(kLeft - 10) << "\" y1=\"" << fixed(kTop) << "\" x2=\""
        << fixed(kLeft - 10) << "\" y2=\"" << fixed(kTop + kPlotH) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        svg << "<text x=\"" << fixed(kLeft - 14) << "\" y=\"" << fixed(y_of(v) + 4)
            << "\" text-anchor=\"end\">" << fixed(v) << "</text>\n";
    }
    svg << "<text x=\"12\" y=\"" << fixed(kTop + kPlotH / 2) << "\" transform=\"rotate(-90 12 "
        << fixed(kTop + kPlotH / 2) << ")\" text-anchor=\"middle\">c-MSE</text>\n";

    std::size_t g = 0;
    for (auto& [key, values] : groups) {
        std::sort(values.begin(), values.end());
        const double q1 = eval::quantile(values, 0.25), med = eval::quantile(values, 0.5),
                     q3 = eval::quantile(values, 0.75);
        const double cx = kLeft + kStep * static_cast<double>(g) + kStep / 2;
        const double x0 = cx - kBoxW / 2, x1 = cx + kBoxW / 2;
        const auto& [method, n, vz, vw] = key;
        svg << "<g>\n"
            << "<line x1=\"" << fixed(cx) << "\" y1=\"" << fixed(y_of(values.back())) << "\" x2=\""
            << fixed(cx) << "\" y2=\"" << fixed(y_of(values.front())) << "\" stroke=\"black\"/>\n"
            << "<rect x=\"" << fixed(x0) << "\" y=\"" << fixed(y_of(q3)) << "\" width=\""
            << fixed(kBoxW) << "\" height=\"" << fixed(y_of(q1) - y_of(q3))
            << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n"
            << "<line x1=\"" << fixed(x0) << "\" y1=\"" << fixed(y_of(med)) << "\" x2=\"" << fixed(x1)
            << "\" y2=\"" << fixed(y_of(med)) << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        for (double end : {values.front(), values.back()}) {
            svg << "<line x1=\"" << fixed(cx - kBoxW / 4) << "\" y1=\"" << fixed(y_of(end))
                << "\" x2=\"" << fixed(cx + kBoxW / 4) << "\" y2=\"" << fixed(y_of(end))
                << "\" stroke=\"black\"/>\n";
        }
        svg << "<text x=\"" << fixed(cx) << "\" y=\"" << fixed(kTop + kPlotH + 18)
            << "\" text-anchor=\"middle\">" << estimators::to_string(method) << "</text>\n"
            << "<text x=\"" << fixed(cx) << "\" y=\"" << fixed(kTop + kPlotH + 32)
            << "\" text-anchor=\"middle\">n=" << n << "</text>\n"
            << "<text x=\"" << fixed(cx) << "\" y=\"" << fixed(kTop + kPlotH + 46)
            << "\" text-anchor=\"middle\">z=" << format_double(vz) << " w=" << format_double(vw)
            << "</text>\n"
            << "</g>\n";
        ++g;
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace proxmmr::io
