#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "ham/merge.hpp"
#include "helpers.hpp"

using namespace ham;
using ham::testing::max_abs_diff;
using ham::testing::random_params;
using ham::testing::single;

namespace {

MergeInput random_input(std::size_t n_sources, std::uint64_t seed, double r = 0.2,
                        const std::vector<std::pair<std::string, Shape>>& layout = ham::testing::small_layout()) {
  std::mt19937_64 rng(seed);
  MergeInput in;
  in.theta0 = random_params(layout, rng, 1.0);
  for (std::size_t i = 0; i < n_sources; ++i) in.sources.push_back(add(in.theta0, random_params(layout, rng, 0.5)));
  in.trim_ratio = r;
  return in;
}

std::vector<double> flat_values(const ParamSet& ps) { return flatten(ps).values; }

// Independent per-coordinate oracle: sort magnitudes, drop the lowest
// ceil(r * N), average the survivors per coordinate.
std::vector<double> brute_force_rhm(const MergeInput& in) {
  const auto base = flat_values(in.theta0);
  const std::size_t n = base.size();
  std::vector<double> sum(n, 0.0), count(n, 0.0);
  for (const auto& src : in.sources) {
    const auto th = flat_values(src);
    std::vector<double> v(n), mags(n);
    for (std::size_t j = 0; j < n; ++j) {
      v[j] = th[j] - base[j];
      mags[j] = std::abs(v[j]);
    }
    std::sort(mags.begin(), mags.end());
    const auto drop = static_cast<std::size_t>(std::ceil(in.trim_ratio * static_cast<double>(n) - 1e-9));
    const double sigma = drop == 0 ? -1.0 : mags[drop - 1];
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(v[j]) > sigma) {
        sum[j] += v[j];
        count[j] += 1.0;
      }
    }
  }
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = base[j] + (count[j] > 0 ? sum[j] / count[j] : 0.0);
  return out;
}

ParamSet two_layers(std::vector<double> a, std::vector<double> b) {
  ParamSet ps;
  const Shape sa{a.size()}, sb{b.size()};
  ps.add("l1", TensorF(sa, std::move(a)));
  ps.add("l2", TensorF(sb, std::move(b)));
  return ps;
}

}  // namespace

TEST_CASE("avg_merge") {
  SUBCASE("one source is returned unchanged") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto in = random_input(1, seed, 0.2, {{"w", {500}}});
      CHECK(avg_merge(in) == in.sources[0]);
    }
    MergeInput tiny;
    tiny.theta0 = single("w", {1.0, -3.0});
    tiny.sources = {single("w", {1e-17, 2.5e-300})};
    CHECK(avg_merge(tiny) == tiny.sources[0]);
    tiny.trim_ratio = 0.0;
    CHECK(rhm(tiny).first == tiny.sources[0]);
  }
  SUBCASE("opposite updates cancel") {
    MergeInput in;
    in.theta0 = single("w", {1.0, -2.0, 0.5});
    in.sources = {single("w", {1.5, -2.25, 0.0}), single("w", {0.5, -1.75, 1.0})};
    CHECK(avg_merge(in) == in.theta0);
  }
  SUBCASE("matches lin_comb of updates") {
    auto in = random_input(4, 2);
    std::vector<ParamSet> terms{in.theta0};
    std::vector<double> coeffs{1.0};
    ParamSet sum = update_vector(in.sources[0], in.theta0);
    for (std::size_t i = 1; i < 4; ++i) sum = add(sum, update_vector(in.sources[i], in.theta0));
    terms.push_back(sum);
    coeffs.push_back(0.25);
    CHECK(avg_merge(in) == lin_comb(coeffs, terms));
  }
  SUBCASE("incongruent source") {
    auto in = random_input(2, 3);
    in.sources.push_back(single("w", {1.0}));
    CHECK_THROWS_AS(avg_merge(in), CongruenceError);
    in.sources.clear();
    CHECK_THROWS_AS(avg_merge(in), DomainError);
  }
}

TEST_CASE("trim_source") {
  SUBCASE("r=0 keeps everything") {
    auto in = random_input(1, 4);
    auto t = trim_source(in.sources[0], in.theta0, 0.0);
    CHECK(t.update == update_vector(in.sources[0], in.theta0));
    CHECK(t.mask.count() == t.mask.bits.size());
  }
  SUBCASE("hand example at r=0.5") {
    auto t = trim_source(single("v", {0.1, 0.4, 0.2, 0.9}), single("v", {0, 0, 0, 0}), 0.5);
    CHECK(t.update[0].tensor.values == std::vector<double>{0, 0.4, 0, 0.9});
    CHECK(t.mask.bits == std::vector<bool>{false, true, false, true});
  }
  SUBCASE("kept entries retain their sign") {
    auto t = trim_source(single("v", {-0.1, -0.4, 0.2, -0.9}), single("v", {0, 0, 0, 0}), 0.5);
    CHECK(t.update[0].tensor.values == std::vector<double>{0, -0.4, 0, -0.9});
  }
  SUBCASE("model level sees global redundancy, layer level does not") {
    const auto zero = two_layers({0, 0}, {0, 0});
    const auto theta = two_layers({0.9, 0.8}, {0.1, 0.2});
    auto m = trim_source(theta, zero, 0.5, TrimLevel::model);
    auto l = trim_source(theta, zero, 0.5, TrimLevel::layer);
    CHECK(m.mask.bits == std::vector<bool>{true, true, false, false});
    CHECK(l.mask.bits == std::vector<bool>{true, false, false, true});
    CHECK_FALSE(m.update == l.update);
  }
  SUBCASE("single-layer models keep the same count at both levels") {
    std::mt19937_64 rng(5);
    for (double r : {0.1, 0.2, 0.5, 0.9}) {
      auto a = random_params({{"w", {50}}}, rng);
      auto b = random_params({{"w", {50}}}, rng);
      CHECK(trim_source(a, b, r, TrimLevel::model).mask.count() == trim_source(a, b, r, TrimLevel::layer).mask.count());
    }
  }
  SUBCASE("kept fraction near 1 - r") {
    auto in = random_input(1, 6, 0.3, {{"w", {1000}}, {"b", {17}}});
    auto t = trim_source(in.sources[0], in.theta0, 0.3);
    const double n = static_cast<double>(t.mask.bits.size());
    const double kept = static_cast<double>(t.mask.count()) / n;
    CHECK(kept <= 0.7 + 1.0 / n);
    CHECK(kept >= 0.7 - 1.0 / n);
  }
  SUBCASE("bad ratio") {
    auto in = random_input(1, 7);
    CHECK_THROWS_AS(trim_source(in.sources[0], in.theta0, 1.0), ConfigError);
    CHECK_THROWS_AS(trim_source(in.sources[0], in.theta0, -0.1), ConfigError);
  }
}

TEST_CASE("disjoint_mean_merge") {
  const auto zero = single("v", {0, 0, 0});
  auto flat_layout = flatten(zero).layout;
  SUBCASE("hand example") {
    std::vector<TrimmedUpdate> t{{single("v", {1, 0, -2}), {{true, false, true}, flat_layout}},
                                 {single("v", {3, 0, 0}), {{true, false, false}, flat_layout}}};
    CHECK(disjoint_mean_merge(zero, t)[0].tensor.values == std::vector<double>{2, 0, -2});
  }
  SUBCASE("all masks false gives theta0") {
    auto base = single("v", {0.3, -7, 2});
    std::vector<TrimmedUpdate> t{{single("v", {0, 0, 0}), {{false, false, false}, flat_layout}}};
    CHECK(disjoint_mean_merge(base, t) == base);
  }
  SUBCASE("all masks true equals avg_merge") {
    auto in = random_input(3, 8);
    std::vector<TrimmedUpdate> t;
    for (const auto& s : in.sources) t.push_back(trim_source(s, in.theta0, 0.0));
    CHECK(disjoint_mean_merge(in.theta0, t) == avg_merge(in));
  }
  SUBCASE("bounded by the kept updates") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto in = random_input(4, seed, 0.5);
      const auto trimmed = trim_all(in, TrimLevel::model);
      const auto merged = flat_values(update_vector(disjoint_mean_merge(in.theta0, trimmed), in.theta0));
      for (std::size_t j = 0; j < merged.size(); ++j) {
        double lo = INFINITY, hi = -INFINITY;
        for (const auto& t : trimmed) {
          if (t.mask.bits[j]) {
            const double v = flat_values(t.update)[j];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        }
        if (lo == INFINITY) {
          CHECK(merged[j] == 0.0);
        } else {
          CHECK(merged[j] >= lo - 1e-12);
          CHECK(merged[j] <= hi + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("rhm") {
  SUBCASE("r=0 equals avg_merge exactly") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto in = random_input(3, seed, 0.0);
      CHECK(rhm(in).first == avg_merge(in));
    }
  }
  SUBCASE("one source at r=0 is returned") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto in = random_input(1, seed, 0.0, {{"w", {500}}});
      CHECK(rhm(in).first == in.sources[0]);
    }
  }
  SUBCASE("brute-force oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto in = random_input(3, 100 + seed, 0.4, {{"a", {10, 15}}, {"b", {50}}});
      const auto got = flat_values(rhm(in).first);
      const auto want = brute_force_rhm(in);
      double worst = 0.0;
      for (std::size_t j = 0; j < got.size(); ++j) worst = std::max(worst, std::abs(got[j] - want[j]));
      CHECK(worst <= 1e-12);
    }
  }
  SUBCASE("invariant to source order") {
    auto in = random_input(4, 11, 0.3);
    auto perm = in;
    std::reverse(perm.sources.begin(), perm.sources.end());
    std::swap(perm.sources[0], perm.sources[2]);
    CHECK(max_abs_diff(rhm(in).first, rhm(perm).first) <= 1e-12);
    CHECK(max_abs_diff(avg_merge(in), avg_merge(perm)) <= 1e-12);
  }
  SUBCASE("scale equivariant") {
    auto in = random_input(3, 12, 0.25);
    in.theta0 = in.theta0.zeros_like();
    for (double c : {2.0, 0.3, 17.0}) {
      auto scaled = in;
      for (auto& s : scaled.sources) s = scale(s, c);
      CHECK(max_abs_diff(rhm(scaled).first, scale(rhm(in).first, c)) <= 1e-12 * c);
    }
  }
  SUBCASE("report") {
    auto in = random_input(3, 13, 0.2, {{"w", {40}}, {"b", {10}}});
    auto [theta, rep] = rhm(in);
    CHECK(rep.strategy == MergeStrategy::rhm);
    CHECK(rep.trim_ratio == 0.2);
    CHECK(rep.total_coords == 50);
    CHECK(rep.layer_names == std::vector<std::string>{"w", "b"});
    REQUIRE(rep.kept_fraction.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(rep.kept_fraction[i] <= 0.8 + 1.0 / 50);
      CHECK(rep.kept_counts[i][0] + rep.kept_counts[i][1] == static_cast<std::size_t>(rep.kept_fraction[i] * 50 + 0.5));
    }
    const auto trimmed = trim_all(in, TrimLevel::model);
    std::size_t none = 0;
    for (std::size_t j = 0; j < 50; ++j) {
      none += std::none_of(trimmed.begin(), trimmed.end(), [&](const TrimmedUpdate& t) { return bool(t.mask.bits[j]); });
    }
    CHECK(rep.all_zero_mask_coords == none);
    nlohmann::json j = rep;
    CHECK(j["strategy"] == "rhm");
    CHECK(j["kept_fraction"].size() == 3);
  }
}

TEST_CASE("best_model_select") {
  auto in = random_input(3, 14);
  const std::vector<double> acc{0.6, 0.9, 0.7};
  CHECK(best_model_select(in.sources, acc) == 1);
  const std::vector<double> tie{0.8, 0.8};
  CHECK(best_model_select(std::span(in.sources).first(2), tie) == 0);
  const std::vector<double> one{0.1};
  CHECK(best_model_select(std::span(in.sources).first(1), one) == 0);
  CHECK_THROWS_AS(best_model_select({}, {}), DomainError);
  CHECK_THROWS_AS(best_model_select(in.sources, tie), DomainError);
}

TEST_CASE("merge dispatch") {
  auto in = random_input(3, 15, 0.3);
  SUBCASE("rhm and avg") {
    CHECK(merge(in).first == rhm(in).first);
    in.strategy = MergeStrategy::avg;
    CHECK(merge(in).first == avg_merge(in));
  }
  SUBCASE("layer_trim uses per-layer thresholds") {
    in.strategy = MergeStrategy::layer_trim;
    const auto trimmed = trim_all(in, TrimLevel::layer);
    CHECK(merge(in).first == disjoint_mean_merge(in.theta0, trimmed));
  }
  SUBCASE("best_model") {
    in.strategy = MergeStrategy::best_model;
    const std::vector<double> acc{0.2, 0.1, 0.5};
    auto [theta, rep] = merge(in, acc);
    CHECK(theta == in.sources[2]);
    CHECK(rep.selected == 2u);
    CHECK_THROWS_AS(merge(in), DomainError);
  }
  SUBCASE("strategy names") {
    for (auto s : {MergeStrategy::rhm, MergeStrategy::avg, MergeStrategy::layer_trim, MergeStrategy::best_model}) {
      CHECK(merge_strategy_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(merge_strategy_from_string("ties"), ConfigError);
  }
}
