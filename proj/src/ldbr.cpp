#include "ssn/ldbr.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ssn/tensor.hpp"

namespace ssn::ldbr {

namespace {

std::vector<int> outside_key(const Image& y, const std::vector<int>& block) {
  std::vector<int> key = y;
  for (int p : block) key[p] = -1;
  return key;
}

Distribution propagate(const Distribution& p, const DiscreteConditional& k) {
  Distribution out(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    const auto& row = k.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) out[j] += p[i] * row[j];
  }
  return out;
}

void check_family(const ResamplingFamily& family, std::size_t n) {
  if (family.kernels.empty()) throw ContractViolation("ldbr: empty resampling family");
  for (const auto& k : family.kernels) {
    if (k.size() != n) throw ContractViolation("ldbr: kernel support does not match distribution");
  }
}

std::string order_str(const std::vector<std::size_t>& order) {
  std::string s;
  for (std::size_t i = 0; i < order.size(); ++i) s += (i ? "-" : "") + std::to_string(order[i]);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

DiscreteSpace::DiscreteSpace(std::vector<Image> support, std::vector<std::vector<int>> blocks)
    : support_(std::move(support)), blocks_(std::move(blocks)) {
  if (support_.empty()) throw ContractViolation("DiscreteSpace: empty support");
  const std::size_t pixels = support_.front().size();
  for (const auto& y : support_) {
    if (y.size() != pixels) throw ContractViolation("DiscreteSpace: ragged images");
  }
  std::vector<int> seen(pixels, 0);
  for (const auto& b : blocks_) {
    for (int p : b) {
      if (p < 0 || static_cast<std::size_t>(p) >= pixels || seen[p]++) {
        throw ContractViolation("DiscreteSpace: blocks must be disjoint pixel sets");
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ContractViolation("DiscreteSpace: blocks must cover every pixel");
  }
}

DiscreteSpace DiscreteSpace::product(int pixels, const std::vector<int>& levels,
                                     std::vector<std::vector<int>> blocks) {
  std::vector<Image> support;
  Image y(pixels, 0);
  std::vector<std::size_t> idx(pixels, 0);
  while (true) {
    for (int p = 0; p < pixels; ++p) y[p] = levels[idx[p]];
    support.push_back(y);
    int p = pixels - 1;
    while (p >= 0 && ++idx[p] == levels.size()) idx[p--] = 0;
    if (p < 0) break;
  }
  return DiscreteSpace(std::move(support), std::move(blocks));
}

std::size_t DiscreteSpace::index_of(const Image& y) const {
  auto it = std::find(support_.begin(), support_.end(), y);
  if (it == support_.end()) throw ContractViolation("DiscreteSpace: image not in support");
  return static_cast<std::size_t>(it - support_.begin());
}

bool DiscreteSpace::same_outside(std::size_t i, std::size_t j, std::size_t a) const {
  return outside_key(support_[i], blocks_[a]) == outside_key(support_[j], blocks_[a]);
}

// ---------------------------------------------------------------------------

DiscreteConditional::DiscreteConditional(std::vector<std::vector<double>> table)
    : table_(std::move(table)) {
  for (const auto& row : table_) {
    if (row.size() != table_.size()) throw ContractViolation("DiscreteConditional: table not square");
    validate_distribution(row);
  }
}

DiscreteConditional DiscreteConditional::identity(std::size_t n) {
  std::vector<std::vector<double>> t(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) t[i][i] = 1.0;
  return DiscreteConditional(std::move(t));
}

DiscreteConditional DiscreteConditional::constant(const Distribution& p) {
  return DiscreteConditional(std::vector<std::vector<double>>(p.size(), p));
}

void validate_distribution(const Distribution& p) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw ContractViolation("ldbr: negative or non-finite probability");
    total += v;
  }
  if (std::abs(total - 1.0) > kRowTolerance) {
    throw ContractViolation("ldbr: probabilities sum to " + std::to_string(total));
  }
}

ResamplingFamily identity_family(const DiscreteSpace& space) {
  return {std::vector<DiscreteConditional>(space.block_count(),
                                           DiscreteConditional::identity(space.size()))};
}

ResamplingFamily trivial_family(const DiscreteSpace& space, const Distribution& base) {
  validate_distribution(base);
  return {std::vector<DiscreteConditional>(space.block_count(),
                                           DiscreteConditional::constant(base))};
}

ResamplingFamily inpainting_family(const DiscreteSpace& space, const Distribution& base) {
  validate_distribution(base);
  const std::size_t n = space.size();
  ResamplingFamily family;
  for (std::size_t a = 0; a < space.block_count(); ++a) {
    std::vector<std::vector<double>> t(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      double mass = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (space.same_outside(i, j, a)) mass += base[j];
      }
      if (mass == 0.0) {
        t[i][i] = 1.0;
        continue;
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (space.same_outside(i, j, a)) t[i][j] = base[j] / mass;
      }
      // Renormalize so the row sums to one to rounding.
      const double s = std::accumulate(t[i].begin(), t[i].end(), 0.0);
      for (double& v : t[i]) v /= s;
    }
    family.kernels.emplace_back(std::move(t));
  }
  return family;
}

Distribution sequential_resample_distribution(const ResamplingFamily& family,
                                              const Distribution& base,
                                              const std::vector<std::size_t>& order) {
  check_family(family, base.size());
  Distribution p = base;
  for (std::size_t a : order) p = propagate(p, family.kernels.at(a));
  return p;
}

Distribution sequential_resample_from(const ResamplingFamily& family, std::size_t start,
                                      const std::vector<std::size_t>& order) {
  const std::size_t n = family.kernels.at(0).size();
  Distribution delta(n, 0.0);
  delta.at(start) = 1.0;
  return sequential_resample_distribution(family, delta, order);
}

double total_variation(const Distribution& p, const Distribution& q) {
  if (p.size() != q.size()) throw ContractViolation("total_variation: support mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

namespace {

std::vector<std::vector<std::size_t>> block_orders(std::size_t blocks, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> orders;
  std::vector<std::size_t> perm(blocks);
  std::iota(perm.begin(), perm.end(), 0);
  if (blocks <= kMaxExhaustiveBlocks) {
    do orders.push_back(perm);
    while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < kSampledOrders; ++i) {
      std::shuffle(perm.begin(), perm.end(), rng);
      orders.push_back(perm);
    }
  }
  return orders;
}

// Chains run on `base`'s support; `decoder` maps outcomes to the compared space.
BlockResamplingCheck check_orders(const ResamplingFamily& family, const Distribution& base,
                                  const std::vector<std::size_t>& decoder, std::size_t image_count,
                                  double tol, std::uint64_t order_seed) {
  check_family(family, base.size());
  validate_distribution(base);
  const std::size_t n = base.size();
  const Distribution target = pushforward(base, decoder, image_count);

  BlockResamplingCheck out;
  for (const auto& order : block_orders(family.kernels.size(), order_seed)) {
    OrderCheck oc;
    oc.order = order;
    Distribution marginal(image_count, 0.0);
    std::vector<double> joint(image_count * image_count, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      if (base[s] == 0.0) continue;
      const Distribution cond =
          pushforward(sequential_resample_from(family, s, order), decoder, image_count);
      oc.conditional_tv = std::max(oc.conditional_tv, total_variation(cond, target));
      for (std::size_t j = 0; j < image_count; ++j) {
        marginal[j] += base[s] * cond[j];
        joint[decoder[s] * image_count + j] += base[s] * cond[j];
      }
    }
    double dep = 0.0;
    for (std::size_t i = 0; i < image_count; ++i)
      for (std::size_t j = 0; j < image_count; ++j)
        dep += std::abs(joint[i * image_count + j] - target[i] * target[j]);
    oc.marginal_tv = total_variation(marginal, target);
    oc.dependence_tv = 0.5 * dep;
    out.max_tv = std::max(out.max_tv, oc.conditional_tv);
    out.max_marginal_tv = std::max(out.max_marginal_tv, oc.marginal_tv);
    out.max_dependence_tv = std::max(out.max_dependence_tv, oc.dependence_tv);
    out.orders.push_back(std::move(oc));
  }
  out.is_block_resampling = out.max_tv <= tol;
  return out;
}

}  // namespace

BlockResamplingCheck is_block_resampling(const ResamplingFamily& family, const Distribution& base,
                                         double tol, std::uint64_t order_seed) {
  std::vector<std::size_t> id(base.size());
  std::iota(id.begin(), id.end(), 0);
  return check_orders(family, base, id, base.size(), tol, order_seed);
}

BlockResamplingCheck is_latent_block_resampling(const ResamplingFamily& latent_family,
                                                const Distribution& latent_base,
                                                const std::vector<std::size_t>& decoder,
                                                std::size_t image_count, double tol,
                                                std::uint64_t order_seed) {
  return check_orders(latent_family, latent_base, decoder, image_count, tol, order_seed);
}

double squared_error(const std::vector<int>& a, const std::vector<int>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<double> ldbr_objective_per_block(const DiscreteSpace& space,
                                             const ResamplingFamily& family,
                                             const Distribution& base, const Distortion& d) {
  check_family(family, base.size());
  const std::size_t blocks = space.block_count();
  if (family.kernels.size() != blocks) throw ContractViolation("ldbr_objective: one kernel per block");
  auto sub_image = [&](const Image& y, std::size_t b) {
    std::vector<int> v;
    for (int p : space.block(b)) v.push_back(y[p]);
    return v;
  };
  std::vector<double> per_block(blocks, 0.0);
  for (std::size_t a = 0; a < blocks; ++a) {
    for (std::size_t i = 0; i < space.size(); ++i) {
      if (base[i] == 0.0) continue;
      for (std::size_t j = 0; j < space.size(); ++j) {
        const double pk = family.kernels[a](i, j);
        if (pk == 0.0) continue;
        double dist = 0.0;
        for (std::size_t b = 0; b < blocks; ++b) {
          if (b != a) dist += d(sub_image(space.image(i), b), sub_image(space.image(j), b));
        }
        per_block[a] += base[i] * pk * dist;
      }
    }
  }
  return per_block;
}

double ldbr_objective(const DiscreteSpace& space, const ResamplingFamily& family,
                      const Distribution& base, const Distortion& d) {
  const auto per = ldbr_objective_per_block(space, family, base, d);
  return std::accumulate(per.begin(), per.end(), 0.0);
}

Distribution pushforward(const Distribution& p, const std::vector<std::size_t>& map,
                         std::size_t target_size) {
  if (map.size() != p.size()) throw ContractViolation("pushforward: map does not cover support");
  Distribution out(target_size, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) out.at(map[i]) += p[i];
  return out;
}

// ---------------------------------------------------------------------------

CounterexampleReport sequential_inpainting_counterexample() {
  DiscreteSpace space = DiscreteSpace::product(2, {0, 1}, {{0}, {1}});
  Distribution base(space.size(), 0.0);
  base[space.index_of({1, 1})] = 0.5;
  base[space.index_of({0, 0})] = 0.5;

  CounterexampleReport r{space, base, 0.0, 0.0, {}, {}, 0.0, 0.0, {}, {}, 0.0, 0.0, {}};
  const std::size_t ones = space.index_of({1, 1});
  const std::size_t zeros = space.index_of({0, 0});
  const ResamplingFamily inpaint = inpainting_family(space, base);
  // Kernel for block 0 (pixel y0) applied at y = (., 1): mass on y0 = 1.
  r.p_y0_one_given_y1_one = inpaint.kernels[0](ones, ones);
  r.p_y1_one_given_y0_one = inpaint.kernels[1](ones, ones);

  for (std::vector<std::size_t> order : {std::vector<std::size_t>{0, 1}, {1, 0}}) {
    Distribution fin = sequential_resample_from(inpaint, ones, order);
    r.p_reach_zeros = std::max(r.p_reach_zeros, fin[zeros]);
    r.tv_to_base = std::max(r.tv_to_base, total_variation(fin, base));
    r.orders.push_back(order);
    r.final_from_ones.push_back(std::move(fin));
  }
  const ResamplingFamily trivial = trivial_family(space, base);
  r.inpainting_check = is_block_resampling(inpaint, base);
  r.trivial_check = is_block_resampling(trivial, base);
  r.inpainting_objective = ldbr_objective(space, inpaint, base, squared_error);
  r.trivial_objective_per_block = ldbr_objective_per_block(space, trivial, base, squared_error);
  r.trivial_objective = ldbr_objective(space, trivial, base, squared_error);
  return r;
}

std::string format_report(const CounterexampleReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "two-pixel sequential inpainting\n";
  os << "  base: P(1,1) = " << r.base[r.space.index_of({1, 1})]
     << ", P(0,0) = " << r.base[r.space.index_of({0, 0})] << "\n";
  os << "  P(y0=1 | y1=1) = " << r.p_y0_one_given_y1_one << "\n";
  os << "  P(y1=1 | y0=1) = " << r.p_y1_one_given_y0_one << "\n";
  for (std::size_t i = 0; i < r.orders.size(); ++i) {
    os << "  order " << order_str(r.orders[i]) << " from (1,1):";
    for (std::size_t j = 0; j < r.space.size(); ++j) {
      const auto& y = r.space.image(j);
      os << " (" << y[0] << "," << y[1] << ")=" << r.final_from_ones[i][j];
    }
    os << "\n";
  }
  os << "  P(reach (0,0)) = " << r.p_reach_zeros << "\n";
  os << "  TV(final, base) = " << r.tv_to_base << "\n";
  os << "  inpainting: block-resampling = " << (r.inpainting_check.is_block_resampling ? "yes" : "no")
     << ", max TV = " << r.inpainting_check.max_tv << ", objective = " << r.inpainting_objective
     << "\n";
  os << "  trivial:    block-resampling = " << (r.trivial_check.is_block_resampling ? "yes" : "no")
     << ", max TV = " << r.trivial_check.max_tv << ", objective = " << r.trivial_objective
     << " (per block:";
  for (double v : r.trivial_objective_per_block) os << ' ' << v;
  os << ")\n";
  return os.str();
}

std::string report_csv(const CounterexampleReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "family,order,tv_distance,objective\n";
  for (const auto& oc : r.inpainting_check.orders) {
    os << "inpainting," << order_str(oc.order) << ',' << oc.conditional_tv << ','
       << r.inpainting_objective << "\n";
  }
  for (const auto& oc : r.trivial_check.orders) {
    os << "trivial," << order_str(oc.order) << ',' << oc.conditional_tv << ','
       << r.trivial_objective << "\n";
  }
  return os.str();
}

Distribution product_distribution(const DiscreteSpace& space,
                                  const std::vector<std::vector<double>>& marginals) {
  Distribution p(space.size(), 1.0);
  for (std::size_t i = 0; i < space.size(); ++i) {
    const Image& y = space.image(i);
    if (marginals.size() != y.size()) throw ContractViolation("product_distribution: one marginal per pixel");
    for (std::size_t k = 0; k < y.size(); ++k) p[i] *= marginals[k].at(static_cast<std::size_t>(y[k]));
  }
  validate_distribution(p);
  return p;
}

Fixture independent_blocks_fixture() {
  auto space = DiscreteSpace::product(3, {0, 1, 2}, {{0}, {1, 2}});
  auto base = product_distribution(space, {{0.2, 0.5, 0.3}, {0.6, 0.3, 0.1}, {0.25, 0.25, 0.5}});
  return {std::move(space), std::move(base)};
}

}  // namespace ssn::ldbr
