#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace phasedeploy::env {

enum class TaskName { kKeyDoorSparse, kLineBalanceDense };

std::string_view to_string(TaskName name);
// Throws ConfigError for unknown names.
TaskName parse_task_name(std::string_view name);

// Fixed-capacity real vector for observations and feature rows; avoids a heap
// allocation per environment step.
class SmallVec {
 public:
  static constexpr std::size_t kCapacity = 8;

  SmallVec() = default;
  SmallVec(std::initializer_list<double> values) {
    assert(values.size() <= kCapacity);
    for (double v : values) data_[size_++] = v;
  }

  std::size_t size() const { return size_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  std::span<const double> span() const { return {data_.data(), size_}; }
  friend bool operator==(const SmallVec& a, const SmallVec& b) {
    if (a.size_ != b.size_) return false;
    for (std::size_t i = 0; i < a.size_; ++i) {
      if (a.data_[i] != b.data_[i]) return false;
    }
    return true;
  }

 private:
  std::array<double, kCapacity> data_{};
  std::size_t size_ = 0;
};

struct EnvSpec {
  TaskName name = TaskName::kKeyDoorSparse;
  int horizon = 40;
  double gamma = 0.99;
  std::vector<std::string> feature_names;
  int action_count = 4;
  // key_door_sparse only.
  int grid_size = 8;
  // line_balance_dense only: in-band tolerance on |pos|.
  double band = 0.1;

  // Canonical spec for a task; feature names and action arity are fixed by
  // the task, horizon/gamma may be overridden afterwards.
  static EnvSpec defaults(TaskName name);

  // Throws ConfigError naming the violated field.
  void validate() const;
  std::uint64_t hash() const;
};

struct KeyDoorState {
  int row = 0;
  int col = 0;
  bool has_key = false;
  bool door_open = false;
  friend bool operator==(const KeyDoorState&, const KeyDoorState&) = default;
};

struct BalanceState {
  double pos = 0.0;
  double vel = 0.0;
  friend bool operator==(const BalanceState&, const BalanceState&) = default;
};

struct EnvState {
  std::variant<KeyDoorState, BalanceState> task;
  int step_index = 0;
  std::uint64_t episode_seed = 0;
  bool done = false;
  friend bool operator==(const EnvState&, const EnvState&) = default;
};

// One (s, a, s') step. `features` is aligned with EnvSpec::feature_names.
struct Transition {
  SmallVec obs;
  int action = 0;
  SmallVec next_obs;
  SmallVec features;
  bool terminal = false;
};

struct EpisodeTrace {
  std::vector<Transition> transitions;
  std::vector<int> success_flags;
  // Consecutive per-step successes; resets to 0 on any failed step.
  std::vector<int> consec_counter;

  void append(const Transition& t, bool success);
  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
};

struct StepResult {
  EnvState state;
  Transition transition;
  // Value of the task's `success` feature for this step.
  bool success = false;
};

// Immutable task instance. reset/step are pure functions of their inputs.
class Env {
 public:
  explicit Env(EnvSpec spec);

  const EnvSpec& spec() const { return spec_; }
  std::size_t obs_dim() const;
  std::optional<std::size_t> feature_index(std::string_view name) const;

  EnvState reset(std::uint64_t episode_seed) const;
  // Throws UsageError for an out-of-range action or a finished episode.
  StepResult step(const EnvState& state, int action) const;
  SmallVec observe(const EnvState& state) const;

  // Downstream task score in [0, 1]; never depends on any candidate reward.
  // key_door: 1 if the door was opened. line_balance: fraction of steps whose
  // resulting position is inside the band. Throws UsageError on empty trace.
  double episode_success(const EpisodeTrace& trace) const;

  // Normalized consecutive-success score in [0, 1]. line_balance: longest
  // in-band streak divided by the horizon. key_door: an opened door is treated
  // as absorbing, so the streak runs from the opening step to the horizon.
  double consec_score(const EpisodeTrace& trace) const;

  // Hand-written reference controller (key first, then door; or bang-bang
  // centering). Used by tests and calibration, not by learners.
  int scripted_action(const EnvState& state) const;

  // Cell coordinates for key_door_sparse (row, col).
  std::pair<int, int> key_cell() const { return {0, spec_.grid_size - 1}; }
  std::pair<int, int> door_cell() const { return {spec_.grid_size - 1, spec_.grid_size - 1}; }

 private:
  StepResult step_key_door(const EnvState& state, int action) const;
  StepResult step_balance(const EnvState& state, int action) const;
  SmallVec features_key_door(const KeyDoorState& s, bool success) const;
  SmallVec features_balance(const BalanceState& s) const;

  EnvSpec spec_;
};

Env make_env(const EnvSpec& spec);

// Rolls out one episode with an arbitrary action source.
template <typename Policy>
EpisodeTrace rollout(const Env& env, std::uint64_t episode_seed, Policy&& policy) {
  EpisodeTrace trace;
  EnvState state = env.reset(episode_seed);
  while (!state.done) {
    const int action = policy(state);
    StepResult r = env.step(state, action);
    trace.append(r.transition, r.success);
    state = r.state;
  }
  return trace;
}

}  // namespace phasedeploy::env
