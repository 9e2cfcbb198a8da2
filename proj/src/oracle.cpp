#include "dpn/oracle.hpp"

#include <algorithm>
#include <limits>

namespace dpn::oracle {

std::vector<std::size_t> fps_order(std::span<const Vec3> xyz, std::size_t count,
                                   std::size_t start) {
  std::vector<std::size_t> chosen{start};
  while (chosen.size() < count) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < xyz.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) {
        const double dx = xyz[i][0] - xyz[c][0];
        const double dy = xyz[i][1] - xyz[c][1];
        const double dz = xyz[i][2] - xyz[c][2];
        nearest = std::min(nearest, dx * dx + dy * dy + dz * dz);
      }
      if (nearest > best_d) {
        best_d = nearest;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

std::vector<std::vector<std::size_t>> ball_sets(std::span<const Vec3> xyz,
                                                std::span<const Vec3> seeds, double radius) {
  std::vector<std::vector<std::size_t>> out(seeds.size());
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (std::size_t i = 0; i < xyz.size(); ++i) {
      double d2 = 0;
      for (int a = 0; a < 3; ++a) d2 += (xyz[i][a] - seeds[s][a]) * (xyz[i][a] - seeds[s][a]);
      if (d2 <= radius * radius) out[s].push_back(i);
    }
  }
  return out;
}

DenseMlp to_dense(const Mlp& mlp) {
  DenseMlp out;
  for (const Linear& l : mlp.layers()) {
    DenseLayer d;
    d.weight.assign(l.in_dim(), std::vector<double>(l.out_dim()));
    for (std::size_t i = 0; i < l.in_dim(); ++i)
      for (std::size_t o = 0; o < l.out_dim(); ++o) d.weight[i][o] = l.weight.at(i, o);
    for (std::size_t o = 0; o < l.out_dim(); ++o) d.bias.push_back(l.bias.at(0, o));
    d.relu = l.act == Activation::Relu;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> apply_mlp(const DenseMlp& mlp, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (const DenseLayer& l : mlp) {
    std::vector<double> y = l.bias;
    for (std::size_t i = 0; i < h.size(); ++i)
      for (std::size_t o = 0; o < y.size(); ++o) y[o] += h[i] * l.weight[i][o];
    if (l.relu)
      for (double& v : y) v = std::max(v, 0.0);
    h = std::move(y);
  }
  return h;
}

namespace {

std::vector<double> joined(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void max_into(std::vector<double>& acc, const std::vector<double>& v) {
  if (acc.empty()) {
    acc = v;
    return;
  }
  for (std::size_t c = 0; c < acc.size(); ++c) acc[c] = std::max(acc[c], v[c]);
}

}  // namespace

std::vector<std::vector<std::vector<double>>> fa_taps(
    Scheme scheme, const std::vector<std::vector<std::vector<double>>>& inputs,
    const std::vector<std::size_t>& group_sizes, const std::vector<DenseMlp>& layers) {
  const std::size_t num_layers = group_sizes.size();
  std::vector<std::size_t> first(num_layers + 1, 0);
  for (std::size_t g = 0; g < num_layers; ++g) first[g + 1] = first[g] + group_sizes[g];

  std::vector<std::vector<std::vector<double>>> taps(num_layers,
                                                     std::vector<std::vector<double>>(inputs.size()));
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    std::vector<std::vector<double>> slot = inputs[s];
    std::vector<double> prev;
    for (std::size_t l = 0; l < num_layers; ++l) {
      const DenseMlp& mlp = layers[l];
      std::vector<double> tap;
      if (scheme == Scheme::Append) {
        for (std::size_t j = first[l]; j < first[num_layers]; ++j) slot[j] = apply_mlp(mlp, slot[j]);
        for (std::size_t j = first[l]; j < first[l + 1]; ++j) max_into(tap, slot[j]);
        if (l > 0) max_into(tap, apply_mlp(mlp, prev));
      } else if (scheme == Scheme::CoordConcat) {
        for (std::size_t j = first[l]; j < first[l + 1]; ++j) {
          const std::vector<double> xyz(inputs[s][j].begin(), inputs[s][j].begin() + 3);
          max_into(tap, apply_mlp(mlp, l == 0 ? inputs[s][j] : joined(xyz, prev)));
        }
      } else {
        for (std::size_t j = first[l]; j < first[num_layers]; ++j)
          slot[j] = apply_mlp(mlp, l == 0 ? slot[j] : joined(slot[j], prev));
        for (std::size_t j = first[l]; j < first[l + 1]; ++j) max_into(tap, slot[j]);
      }
      taps[l][s] = tap;
      prev = std::move(tap);
    }
  }
  return taps;
}

std::vector<std::vector<std::vector<double>>> slot_inputs(const SgResult& sg) {
  const std::size_t m = sg.num_seeds();
  std::vector<std::vector<std::vector<double>>> out(m);
  for (std::size_t g = 0; g < sg.group_inputs.size(); ++g) {
    const Tensor& t = sg.group_inputs[g];
    const std::size_t size = sg.group_sizes[g];
    for (std::size_t s = 0; s < m; ++s) {
      for (std::size_t j = 0; j < size; ++j) {
        std::vector<double> row(t.cols());
        for (std::size_t c = 0; c < t.cols(); ++c) row[c] = t.at(s * size + j, c);
        out[s].push_back(std::move(row));
      }
    }
  }
  return out;
}

}  // namespace dpn::oracle
