#pragma once

// Reference implementations written as plain loops over nested vectors. They
// share no code with the production kernels and are used by the check suites
// and the unit tests.

#include <cstddef>
#include <span>
#include <vector>

#include "dpn/dpointnet.hpp"
#include "dpn/pointcloud.hpp"
#include "dpn/tensor.hpp"

namespace dpn::oracle {

/// Greedy max-min order over the unselected points, recomputing every distance
/// from scratch each step. Ties go to the lowest index.
std::vector<std::size_t> fps_order(std::span<const Vec3> xyz, std::size_t count,
                                   std::size_t start);

/// Ascending indices of the points within `radius` of each seed.
std::vector<std::vector<std::size_t>> ball_sets(std::span<const Vec3> xyz,
                                                std::span<const Vec3> seeds, double radius);

struct DenseLayer {
  std::vector<std::vector<double>> weight;  // [in][out]
  std::vector<double> bias;
  bool relu = true;
};
using DenseMlp = std::vector<DenseLayer>;

DenseMlp to_dense(const Mlp& mlp);
std::vector<double> apply_mlp(const DenseMlp& mlp, const std::vector<double>& x);

/// inputs[seed][slot]: slot encoding, relative xyz first. Returns
/// taps[layer][seed] for the given scheme.
std::vector<std::vector<std::vector<double>>> fa_taps(
    Scheme scheme, const std::vector<std::vector<std::vector<double>>>& inputs,
    const std::vector<std::size_t>& group_sizes, const std::vector<DenseMlp>& layers);

/// Unpacks an SG result into inputs[seed][slot].
std::vector<std::vector<std::vector<double>>> slot_inputs(const SgResult& sg);

}  // namespace dpn::oracle
