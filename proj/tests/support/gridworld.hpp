#pragma once

// 5x5 deterministic gridworld used to check the Q-learning core against
// value iteration.

#include "egonav/qlearn.hpp"

#include <vector>

namespace egonav::testing {

struct GridWorld {
  int size = 5;
  int goal_x = 4;
  int goal_y = 4;
  double step_reward = -1.0;
  double goal_reward = 10.0;
  int max_episode_steps = 50;

  static constexpr int kActions = 4;  // +x, -x, +y, -y
  int n_states() const { return size * size; }
  int index(int x, int y) const { return y * size + x; }
  bool terminal(int s) const { return s == index(goal_x, goal_y); }

  struct Step {
    int next = 0;
    double reward = 0.0;
    bool done = false;
  };
  Step step(int s, int a) const;
  ObservationTensor observe(int s) const;
};

/// Q* by synchronous value iteration; terminal rows stay zero.
Eigen::MatrixXd value_iteration(const GridWorld& g, double gamma, double tol = 1e-13);

/// Per state, every action within tol of the best Q* value.
std::vector<std::vector<int>> optimal_action_sets(const GridWorld& g, const Eigen::MatrixXd& q_star,
                                                   double tol = 1e-9);

struct GridRun {
  Eigen::MatrixXd q;  // n_states x actions, from the online network
  std::int64_t gradient_steps = 0;
  std::int64_t env_steps = 0;
};

/// Epsilon-greedy Q-learning with prioritized replay on one-hot states;
/// episodes start from a uniformly drawn non-terminal state.
GridRun train_gridworld(const GridWorld& g, const TrainConfig& cfg, std::uint64_t seed);

}  // namespace egonav::testing
