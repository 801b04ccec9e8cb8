#pragma once

#include <string>
#include <vector>

namespace mpda {

struct GradCheckRow {
    std::string name;
    double rel_err = 0;
    double tol = 0;
    bool pass = false;
};

// Central finite-difference checks in f64 over every learnable block and
// loss, on small instances. rel_err = |ga - gfd| / (|ga| + |gfd| + 1e-12)
// concatenated over all checked coordinates of one block. The reversal
// composite compares the analytic input gradient against -lambda times the
// finite-difference slope, since the forward pass is an identity there.
std::vector<GradCheckRow> run_gradient_suite();

bool all_pass(const std::vector<GradCheckRow>& rows);

}  // namespace mpda
