#include "qdb/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace qdb {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_number(const std::string& cell, std::size_t row, const std::string& col) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        std::ostringstream msg;
        msg << "csv: non-numeric value '" << cell << "' in column '" << col << "', data row "
            << row + 1;
        throw std::invalid_argument(msg.str());
    }
    return v;
}

struct Parsed {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

Parsed read_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("csv: cannot open '" + path + "'");
    Parsed t;
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("csv: empty file '" + path + "'");
    t.header = split_line(line);
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != t.header.size()) {
            std::ostringstream msg;
            msg << "csv: row " << t.rows.size() + 1 << " has " << cells.size()
                << " cells, header has " << t.header.size();
            throw std::invalid_argument(msg.str());
        }
        t.rows.push_back(std::move(cells));
    }
    if (t.rows.empty()) throw std::invalid_argument("csv: no data rows in '" + path + "'");
    return t;
}

CsvDataset assemble(const Parsed& t, const std::vector<std::size_t>& row_ids,
                    std::size_t resp_idx, std::size_t skip_idx, const std::string& missing_token,
                    const std::string& response_column) {
    CsvDataset out;
    out.response_column = response_column;
    std::vector<std::size_t> cov_cols;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (j == resp_idx || j == skip_idx) continue;
        cov_cols.push_back(j);
        out.covariate_names.push_back(t.header[j]);
    }
    const Eigen::Index n = static_cast<Eigen::Index>(row_ids.size());
    const Eigen::Index p = static_cast<Eigen::Index>(cov_cols.size());
    if (p == 0) throw std::invalid_argument("csv: no covariate columns");
    out.data.x.resize(n, p);
    out.data.y.resize(n);
    out.data.delta.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& row = t.rows[row_ids[static_cast<std::size_t>(i)]];
        const std::string& resp = row[resp_idx];
        if (resp.empty() || resp == missing_token) {
            out.data.delta(i) = 0;
            out.data.y(i) = 0.0;
        } else {
            out.data.delta(i) = 1;
            out.data.y(i) = parse_number(resp, row_ids[static_cast<std::size_t>(i)],
                                         t.header[resp_idx]);
        }
        for (Eigen::Index j = 0; j < p; ++j) {
            const std::string& cell = row[cov_cols[static_cast<std::size_t>(j)]];
            if (cell.empty() || cell == missing_token) {
                std::ostringstream msg;
                msg << "csv: missing covariate value in column '"
                    << t.header[cov_cols[static_cast<std::size_t>(j)]] << "', data row "
                    << row_ids[static_cast<std::size_t>(i)] + 1 << " (covariates must be fully observed)";
                throw std::invalid_argument(msg.str());
            }
            out.data.x(i, j) = parse_number(cell, row_ids[static_cast<std::size_t>(i)],
                                            t.header[cov_cols[static_cast<std::size_t>(j)]]);
        }
    }
    out.degenerate_columns = center_columns(out.data);
    out.data.validate();
    return out;
}

std::size_t find_column(const Parsed& t, const std::string& name) {
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (t.header[j] == name) return j;
    }
    throw std::invalid_argument("csv: column '" + name + "' not found");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

CsvDataset ingest_csv(const std::string& path, const std::string& response_column,
                      const std::string& missing_token) {
    Parsed t = read_table(path);
    std::size_t resp_idx = find_column(t, response_column);
    std::vector<std::size_t> all(t.rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return assemble(t, all, resp_idx, t.header.size(), missing_token, response_column);
}

std::vector<std::pair<double, CsvDataset>> ingest_csv_grouped(const std::string& path,
                                                              const std::string& response_column,
                                                              const std::string& group_column,
                                                              const std::string& missing_token) {
    Parsed t = read_table(path);
    std::size_t resp_idx = find_column(t, response_column);
    std::size_t grp_idx = find_column(t, group_column);
    std::map<double, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        groups[parse_number(t.rows[i][grp_idx], i, group_column)].push_back(i);
    }
    std::vector<std::pair<double, CsvDataset>> out;
    for (const auto& [value, rows] : groups) {
        out.emplace_back(value, assemble(t, rows, resp_idx, grp_idx, missing_token, response_column));
    }
    return out;
}

void write_csv(const std::string& path, const CsvDataset& csv) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("csv: cannot write '" + path + "'");
    out << csv.response_column;
    for (const std::string& name : csv.covariate_names) out << ',' << name;
    out << '\n';
    const Dataset& d = csv.data;
    for (Eigen::Index i = 0; i < d.n(); ++i) {
        if (d.delta(i) == 1) out << format_double(d.y(i));
        for (Eigen::Index j = 0; j < d.p(); ++j) {
            double raw = d.x(i, j) + (d.column_centers.size() ? d.column_centers(j) : 0.0);
            out << ',' << format_double(raw);
        }
        out << '\n';
    }
}

Eigen::MatrixXd expand_interactions(const Eigen::MatrixXd& x, bool center) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    if (d < 1) throw std::invalid_argument("expand_interactions: need at least one column");
    Eigen::MatrixXd out(n, d + d * (d + 1) / 2);
    out.leftCols(d) = x;
    Eigen::Index col = d;
    for (Eigen::Index l = 0; l < d; ++l) {
        for (Eigen::Index m = l; m < d; ++m) {
            out.col(col) = x.col(l).cwiseProduct(x.col(m));
            if (center) out.col(col).array() -= out.col(col).mean();
            ++col;
        }
    }
    return out;
}

void apply_interaction_expansion(Dataset& data) {
    const Eigen::Index d = data.p();
    Eigen::MatrixXd raw = expand_interactions(data.x, false);
    Eigen::VectorXd centers(raw.cols());
    centers.head(d) = data.column_centers.size() == d ? data.column_centers
                                                      : Eigen::VectorXd::Zero(d);
    for (Eigen::Index j = d; j < raw.cols(); ++j) {
        double mean = raw.col(j).mean();
        raw.col(j).array() -= mean;
        centers(j) = mean;
    }
    data.x = std::move(raw);
    data.column_centers = std::move(centers);
}

}  // namespace qdb
