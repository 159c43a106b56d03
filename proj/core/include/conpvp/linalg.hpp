#pragma once

#include <Eigen/Core>

namespace conpvp {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

}  // namespace conpvp
