#include <doctest.h>

#include <cmath>
#include <vector>

#include "gfqi/envs.hpp"
#include "gfqi/features.hpp"

using namespace gfqi;

namespace {

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_CASE("featurize places the polynomial block of the taken action") {
  const std::vector<double> s2{2.0}, s3{3.0}, half{0.5};
  CHECK(as_vector(FeatureMap(2, 1, 1).featurize(0, s2)) == std::vector<double>{1, 2, 0, 0});
  CHECK(as_vector(FeatureMap(2, 1, 2).featurize(1, s3)) == std::vector<double>{0, 0, 0, 1, 3, 9});
  CHECK(as_vector(FeatureMap(2, 1, 3).featurize(0, half)) == std::vector<double>{1, 0.5, 0.25, 0.125, 0, 0, 0, 0});
}

TEST_CASE("vector states use per-coordinate powers without cross terms") {
  const FeatureMap map(3, 2, 2);
  CHECK(map.block_size() == 5);
  CHECK(map.dim() == 15);
  const std::vector<double> s{2.0, -1.0};
  const Eigen::VectorXd f = map.featurize(2, s);
  CHECK(f.head(10).isZero());
  CHECK(as_vector(f.tail(5)) == std::vector<double>{1, 2, 4, -1, 1});
}

TEST_CASE("featurize has exactly one nonzero block holding the monomials up to the degree") {
  RngStream rng = derive_stream(3, {0});
  for (int degree = 1; degree <= 4; ++degree) {
    const FeatureMap map(2, 1, degree);
    for (int k = 0; k < 20; ++k) {
      const int a = rng.uniform_int(2);
      const std::vector<double> s{rng.normal(0.0, 2.0)};
      const Eigen::VectorXd f = map.featurize(a, s);
      const int other = 1 - a;
      CHECK(f.segment(other * map.block_size(), map.block_size()).isZero());
      for (int g = 0; g <= degree; ++g) CHECK(f[a * map.block_size() + g] == doctest::Approx(std::pow(s[0], g)));
    }
  }
}

TEST_CASE("featurize rejects bad inputs") {
  const FeatureMap map(2, 1, 2);
  const std::vector<double> two{1.0, 2.0}, one{1.0};
  CHECK_THROWS_AS(map.featurize(0, two), InputError);
  CHECK_THROWS_AS(map.featurize(2, one), InputError);
  CHECK_THROWS_AS(map.featurize(-1, one), InputError);
  CHECK_THROWS_AS(FeatureMap(0, 1, 1), InputError);
  CHECK_THROWS_AS(FeatureMap(2, 1, 0), InputError);
}

TEST_CASE("featurize_block stacks member features as columns") {
  const FeatureMap map(2, 1, 2);
  SUBCASE("single member") {
    const ClusterBlock b{0, 0, {{{1.5}, 1, 0.0, {0.0}}}};
    CHECK(map.featurize_block(b).col(0) == map.featurize(1, b.members[0].state));
  }
  SUBCASE("identical members") {
    const ClusterBlock b{0, 0, {{{1.5}, 0, 0.0, {0.0}}, {{1.5}, 0, 0.0, {0.0}}}};
    const Eigen::MatrixXd f = map.featurize_block(b);
    CHECK(f.col(0) == f.col(1));
  }
  SUBCASE("random block") {
    const Dataset d = simulate_synthetic({}, ExperimentConfig{2, 6, 2}, derive_stream(4, {0}));
    for (const auto& b : d.blocks()) {
      const Eigen::MatrixXd f = map.featurize_block(b);
      REQUIRE(f.cols() == 6);
      for (int m = 0; m < 6; ++m) CHECK(f.col(m) == map.featurize(b.members[m].action, b.members[m].state));
    }
  }
}

TEST_CASE("design rows follow block and member order") {
  const Dataset d = simulate_synthetic({}, ExperimentConfig{3, 2, 2}, derive_stream(5, {0}));
  const FeatureMap map(2, 1, 2);
  const Design design = build_design(d, map);
  CHECK(design.rows() == 12);
  for (int b = 0; b < d.n_blocks(); ++b) {
    for (int m = 0; m < 2; ++m) {
      const auto& tr = d.blocks()[b].members[m];
      const int row = b * 2 + m;
      CHECK(design.current.row(row).transpose() == map.featurize(tr.action, tr.state));
      CHECK(design.rewards[row] == tr.reward);
      for (int a = 0; a < 2; ++a) CHECK(design.next[a].row(row).transpose() == map.featurize(a, tr.next_state));
    }
  }
  CHECK_THROWS_AS(build_design(d, FeatureMap(3, 1, 2)), InputError);
}

TEST_CASE("greedy next actions break ties toward the lowest index") {
  const Dataset d = simulate_synthetic({}, ExperimentConfig{2, 2, 2}, derive_stream(6, {0}));
  const FeatureMap map(2, 1, 1);
  const Design design = build_design(d, map);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(4);
  for (int a : greedy_next_actions(design, zero)) CHECK(a == 0);
  Eigen::VectorXd beta(4);
  beta << 0, 1, 0, -1;
  const auto acts = greedy_next_actions(design, beta);
  const Eigen::VectorXd best = max_next_q(design, beta);
  for (int r = 0; r < design.rows(); ++r) {
    const double s = d.blocks()[r / 2].members[r % 2].next_state[0];
    CHECK(acts[r] == (s >= 0.0 ? 0 : 1));
    CHECK(best[r] == doctest::Approx(std::abs(s)));
  }
  CHECK(next_features(design, acts).row(0) == design.next[acts[0]].row(0));
}
