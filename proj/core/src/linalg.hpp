// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

namespace segdistill::detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

}  // namespace segdistill::detail
