#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "qdb/data.hpp"

namespace qdb {

struct CsvDataset {
    Dataset data;
    std::vector<std::string> covariate_names;
    std::vector<Eigen::Index> degenerate_columns;  // constant (warned) columns
    std::string response_column;
};

// Reads a headered CSV, takes the named response column (delta = 1 where the
// cell is non-missing), parses every other column as a numeric covariate and
// centers the covariates. Missing responses are empty cells or the given
// token; a missing or non-numeric covariate cell is a hard error naming the
// row and column.
CsvDataset ingest_csv(const std::string& path, const std::string& response_column,
                      const std::string& missing_token = "");

// Same, split into per-group datasets by the named column (each group is
// centered separately). Groups come back sorted by group value.
std::vector<std::pair<double, CsvDataset>> ingest_csv_grouped(const std::string& path,
                                                              const std::string& response_column,
                                                              const std::string& group_column,
                                                              const std::string& missing_token = "");

// Writes the dataset back out with original (uncentered) covariate values,
// missing responses as empty cells; shortest round-trip double formatting.
void write_csv(const std::string& path, const CsvDataset& csv);

// Appends all two-way products X_l * X_m, 1 <= l <= m <= d, l outer. The
// expanded columns are centered when center = true.
Eigen::MatrixXd expand_interactions(const Eigen::MatrixXd& x, bool center = true);

// In-place expansion of a dataset; appends centers for the product columns.
void apply_interaction_expansion(Dataset& data);

}  // namespace qdb
