// Exact enumeration of block-resampling families over tiny discrete image
// spaces: sequential resampling distributions, the block-resampling test, the
// expected off-block distortion objective and the two-pixel inpainting
// counterexample.
//
// All conditionals are for one fixed conditioning input x.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ssn::ldbr {

using Image = std::vector<int>;
using Distribution = std::vector<double>;

inline constexpr double kRowTolerance = 1e-12;
inline constexpr double kExactTvTolerance = 1e-9;
inline constexpr std::size_t kMaxExhaustiveBlocks = 4;
inline constexpr std::size_t kSampledOrders = 24;

/// Finite image space: every image has the same pixel count; blocks are
/// disjoint pixel index sets covering all pixels.
class DiscreteSpace {
 public:
  DiscreteSpace(std::vector<Image> support, std::vector<std::vector<int>> blocks);
  /// All images with `pixels` pixels taking values in `levels`.
  static DiscreteSpace product(int pixels, const std::vector<int>& levels,
                               std::vector<std::vector<int>> blocks);

  std::size_t size() const { return support_.size(); }
  std::size_t block_count() const { return blocks_.size(); }
  const Image& image(std::size_t i) const { return support_[i]; }
  const std::vector<int>& block(std::size_t a) const { return blocks_.at(a); }
  std::size_t index_of(const Image& y) const;
  bool same_outside(std::size_t i, std::size_t j, std::size_t a) const;

 private:
  std::vector<Image> support_;
  std::vector<std::vector<int>> blocks_;
};

/// Row-stochastic table P(y' | y) over a DiscreteSpace.
class DiscreteConditional {
 public:
  explicit DiscreteConditional(std::vector<std::vector<double>> table);
  std::size_t size() const { return table_.size(); }
  double operator()(std::size_t from, std::size_t to) const { return table_[from][to]; }
  const std::vector<double>& row(std::size_t from) const { return table_[from]; }

  static DiscreteConditional identity(std::size_t n);
  /// Every row equal to `p`: resample the whole image from P.
  static DiscreteConditional constant(const Distribution& p);

 private:
  std::vector<std::vector<double>> table_;
};

/// One kernel per block.
struct ResamplingFamily {
  std::vector<DiscreteConditional> kernels;
};

void validate_distribution(const Distribution& p);

ResamplingFamily identity_family(const DiscreteSpace& space);
/// P^a(.|y) = P(.) for every block.
ResamplingFamily trivial_family(const DiscreteSpace& space, const Distribution& base);
/// P^a(y'|y) = P(y'_a | y_{-a}) when y' agrees with y off block a; rows with
/// P(y_{-a}) = 0 stay put.
ResamplingFamily inpainting_family(const DiscreteSpace& space, const Distribution& base);

/// Distribution of y* after applying the kernels of `order` to y(0) ~ base.
Distribution sequential_resample_distribution(const ResamplingFamily& family,
                                              const Distribution& base,
                                              const std::vector<std::size_t>& order);
/// Same chain started from a single image.
Distribution sequential_resample_from(const ResamplingFamily& family, std::size_t start,
                                      const std::vector<std::size_t>& order);

double total_variation(const Distribution& p, const Distribution& q);

struct OrderCheck {
  std::vector<std::size_t> order;
  /// max over starting images y(0) in supp(P) of TV(law(y* | y(0)), P).
  double conditional_tv = 0.0;
  /// TV(law(y*), P) with y(0) ~ P.
  double marginal_tv = 0.0;
  /// TV(joint(y(0), y*), P x P): zero iff y* is a fresh independent draw.
  double dependence_tv = 0.0;
};

struct BlockResamplingCheck {
  bool is_block_resampling = false;
  double max_tv = 0.0;
  double max_marginal_tv = 0.0;
  double max_dependence_tv = 0.0;
  std::vector<OrderCheck> orders;
};

/// Checks every block order (all permutations up to 4 blocks, 24 seeded
/// random orders beyond). Passes when, for every order and every starting
/// image, y* is distributed as P within `tol` in total variation.
BlockResamplingCheck is_block_resampling(const ResamplingFamily& family, const Distribution& base,
                                         double tol = kExactTvTolerance,
                                         std::uint64_t order_seed = 0);

/// Same test for a family acting on latents: y* = decoder(z*), compared
/// against the pushforward of `latent_base`, from every starting latent.
BlockResamplingCheck is_latent_block_resampling(const ResamplingFamily& latent_family,
                                                const Distribution& latent_base,
                                                const std::vector<std::size_t>& decoder,
                                                std::size_t image_count,
                                                double tol = kExactTvTolerance,
                                                std::uint64_t order_seed = 0);

using Distortion = std::function<double(const std::vector<int>& a, const std::vector<int>& b)>;
/// Sum of squared differences.
double squared_error(const std::vector<int>& a, const std::vector<int>& b);

/// E_y sum_{b != a} D(y_b, y'_b) with y' ~ P^a(.|y), one entry per block a.
std::vector<double> ldbr_objective_per_block(const DiscreteSpace& space,
                                             const ResamplingFamily& family,
                                             const Distribution& base, const Distortion& d);
/// Sum of the per-block terms.
double ldbr_objective(const DiscreteSpace& space, const ResamplingFamily& family,
                      const Distribution& base, const Distortion& d);

/// Pushforward of a distribution through a map between supports.
Distribution pushforward(const Distribution& p, const std::vector<std::size_t>& map,
                         std::size_t target_size);

struct CounterexampleReport {
  DiscreteSpace space;
  Distribution base;
  double p_y0_one_given_y1_one = 0.0;
  double p_y1_one_given_y0_one = 0.0;
  /// Law of y* starting from (1,1), one entry per order.
  std::vector<std::vector<std::size_t>> orders;
  std::vector<Distribution> final_from_ones;
  double p_reach_zeros = 0.0;
  double tv_to_base = 0.0;
  BlockResamplingCheck inpainting_check;
  BlockResamplingCheck trivial_check;
  double inpainting_objective = 0.0;
  double trivial_objective = 0.0;
  std::vector<double> trivial_objective_per_block;
};

/// Pixels independent with the given per-pixel marginals over the value levels
/// 0, 1, ...; marginals[k][v] = P(pixel k = v).
Distribution product_distribution(const DiscreteSpace& space,
                                  const std::vector<std::vector<double>>& marginals);

struct Fixture {
  DiscreteSpace space;
  Distribution base;
};
/// Three ternary pixels in blocks {0} and {1, 2}, all pixels independent.
Fixture independent_blocks_fixture();

/// Two binary pixels, each its own block, P((1,1)) = P((0,0)) = 1/2.
CounterexampleReport sequential_inpainting_counterexample();

std::string format_report(const CounterexampleReport& r);
/// order,tv_distance,objective per family/order row.
std::string report_csv(const CounterexampleReport& r);

}  // namespace ssn::ldbr
