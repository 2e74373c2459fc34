#pragma once

#include <Eigen/Dense>
#include <vector>

namespace qdb {

// One sample of (X_i, delta_i, Y_i) triples. Y entries are meaningful only
// where delta = 1. column_centers records the offsets removed from x when
// the dataset went through empirical centering (zero otherwise).
struct Dataset {
    Eigen::MatrixXd x;               // n x p, rows are units
    Eigen::VectorXd y;               // length n
    Eigen::VectorXi delta;           // length n, entries in {0,1}
    Eigen::VectorXd column_centers;  // length p

    Eigen::Index n() const { return x.rows(); }
    Eigen::Index p() const { return x.cols(); }
    Eigen::Index n_observed() const { return delta.cast<Eigen::Index>().sum(); }

    std::vector<Eigen::Index> observed_indices() const;

    // Throws std::invalid_argument when shape or content invariants fail.
    void validate() const;
};

// Subtracts the empirical mean from every column of x and records the
// offsets. Columns that become identically zero are reported back.
std::vector<Eigen::Index> center_columns(Dataset& data);

}  // namespace qdb
