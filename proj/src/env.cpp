#include "phasedeploy/env.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "phasedeploy/error.hpp"
#include "phasedeploy/hash.hpp"
#include "phasedeploy/rng.hpp"

namespace phasedeploy::env {

namespace {

// Actions for key_door_sparse: up, down, left, right.
constexpr std::array<std::pair<int, int>, 4> kMoves{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

constexpr double kBalanceDamping = 0.8;
constexpr double kBalanceThrust = 0.04;
constexpr double kBalanceInitSpread = 0.3;
constexpr double kBalanceVelScale = 0.2;

int manhattan(int r0, int c0, int r1, int c1) { return std::abs(r0 - r1) + std::abs(c0 - c1); }

}  // namespace

std::string_view to_string(TaskName name) {
  switch (name) {
    case TaskName::kKeyDoorSparse:
      return "key_door_sparse";
    case TaskName::kLineBalanceDense:
      return "line_balance_dense";
  }
  return "?";
}

TaskName parse_task_name(std::string_view name) {
  if (name == "key_door_sparse") return TaskName::kKeyDoorSparse;
  if (name == "line_balance_dense") return TaskName::kLineBalanceDense;
  throw ConfigError("unknown task name '" + std::string(name) +
                    "' (expected key_door_sparse or line_balance_dense)");
}

EnvSpec EnvSpec::defaults(TaskName name) {
  EnvSpec spec;
  spec.name = name;
  if (name == TaskName::kKeyDoorSparse) {
    spec.horizon = 40;
    spec.gamma = 0.99;
    spec.feature_names = {"dist_key", "dist_door", "has_key", "door_open", "success"};
    spec.action_count = 4;
  } else {
    spec.horizon = 100;
    spec.gamma = 0.9;
    spec.feature_names = {"pos", "vel", "dist_center", "success"};
    spec.action_count = 3;
  }
  return spec;
}

void EnvSpec::validate() const {
  if (horizon < 1) throw ConfigError("env.horizon must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("env.gamma must lie in (0, 1)");
  if (feature_names.empty()) throw ConfigError("env.feature_names must be nonempty");
  std::set<std::string> seen(feature_names.begin(), feature_names.end());
  if (seen.size() != feature_names.size()) throw ConfigError("env.feature_names must be unique");
  const EnvSpec canonical = defaults(name);
  if (feature_names != canonical.feature_names) {
    throw ConfigError("env.feature_names do not match task " + std::string(to_string(name)));
  }
  if (action_count != canonical.action_count) throw ConfigError("env.action_count does not match task");
  if (name == TaskName::kKeyDoorSparse && grid_size < 3) throw ConfigError("env.grid_size must be >= 3");
  if (name == TaskName::kLineBalanceDense && !(band > 0.0 && band < 1.0)) {
    throw ConfigError("env.band must lie in (0, 1)");
  }
}

std::uint64_t EnvSpec::hash() const {
  Fnv1a h;
  h.str(to_string(name)).i64(horizon).f64(gamma).i64(action_count).i64(grid_size).f64(band);
  for (const auto& f : feature_names) h.str(f);
  return h.value();
}

void EpisodeTrace::append(const Transition& t, bool success) {
  transitions.push_back(t);
  success_flags.push_back(success ? 1 : 0);
  const int prev = consec_counter.empty() ? 0 : consec_counter.back();
  consec_counter.push_back(success ? prev + 1 : 0);
}

Env::Env(EnvSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

Env make_env(const EnvSpec& spec) { return Env(spec); }

std::size_t Env::obs_dim() const { return spec_.name == TaskName::kKeyDoorSparse ? 6 : 3; }

std::optional<std::size_t> Env::feature_index(std::string_view name) const {
  for (std::size_t i = 0; i < spec_.feature_names.size(); ++i) {
    if (spec_.feature_names[i] == name) return i;
  }
  return std::nullopt;
}

EnvState Env::reset(std::uint64_t episode_seed) const {
  Rng rng(derive_stream(episode_seed, 0x5E7));
  EnvState state;
  state.episode_seed = episode_seed;
  if (spec_.name == TaskName::kKeyDoorSparse) {
    // Start uniformly in the 3x3 block at the bottom-left corner.
    const int n = spec_.grid_size;
    KeyDoorState s;
    s.row = n - 3 + static_cast<int>(rng.below(3));
    s.col = static_cast<int>(rng.below(3));
    state.task = s;
  } else {
    BalanceState s;
    s.pos = rng.uniform(-kBalanceInitSpread, kBalanceInitSpread);
    s.vel = 0.0;
    state.task = s;
  }
  return state;
}

SmallVec Env::observe(const EnvState& state) const {
  // Fraction of the horizon already used; without it the critic reads the
  // time-limit decay of returns as a property of position.
  const double elapsed = static_cast<double>(state.step_index) / spec_.horizon;
  if (const auto* s = std::get_if<KeyDoorState>(&state.task)) {
    const double scale = spec_.grid_size - 1;
    const SmallVec f = features_key_door(*s, false);
    return {s->row / scale, s->col / scale, s->has_key ? 1.0 : 0.0, f[0], f[1], elapsed};
  }
  const auto& b = std::get<BalanceState>(state.task);
  return {b.pos, b.vel / kBalanceVelScale, elapsed};
}

SmallVec Env::features_key_door(const KeyDoorState& s, bool success) const {
  const double norm = 2.0 * (spec_.grid_size - 1);
  const auto [kr, kc] = key_cell();
  const auto [dr, dc] = door_cell();
  return {-manhattan(s.row, s.col, kr, kc) / norm, -manhattan(s.row, s.col, dr, dc) / norm,
          s.has_key ? 1.0 : 0.0, s.door_open ? 1.0 : 0.0, success ? 1.0 : 0.0};
}

SmallVec Env::features_balance(const BalanceState& s) const {
  const bool in_band = std::abs(s.pos) <= spec_.band;
  return {s.pos, s.vel, -std::abs(s.pos), in_band ? 1.0 : 0.0};
}

StepResult Env::step(const EnvState& state, int action) const {
  if (action < 0 || action >= spec_.action_count) {
    throw UsageError("action " + std::to_string(action) + " out of range [0, " +
                     std::to_string(spec_.action_count) + ")");
  }
  if (state.done || state.step_index >= spec_.horizon) throw UsageError("step on a finished episode");
  return spec_.name == TaskName::kKeyDoorSparse ? step_key_door(state, action) : step_balance(state, action);
}

StepResult Env::step_key_door(const EnvState& state, int action) const {
  const auto& s = std::get<KeyDoorState>(state.task);
  const int n = spec_.grid_size;
  KeyDoorState next = s;
  next.row = std::clamp(s.row + kMoves[action].first, 0, n - 1);
  next.col = std::clamp(s.col + kMoves[action].second, 0, n - 1);
  if (std::pair{next.row, next.col} == key_cell()) next.has_key = true;
  bool opened = false;
  if (next.has_key && !next.door_open && std::pair{next.row, next.col} == door_cell()) {
    next.door_open = true;
    opened = true;
  }

  StepResult r;
  r.state = state;
  r.state.task = next;
  r.state.step_index = state.step_index + 1;
  r.state.done = opened || r.state.step_index == spec_.horizon;
  r.transition.obs = observe(state);
  r.transition.action = action;
  r.transition.next_obs = observe(r.state);
  r.transition.features = features_key_door(next, opened);
  r.transition.terminal = r.state.done;
  r.success = opened;
  return r;
}

StepResult Env::step_balance(const EnvState& state, int action) const {
  const auto& s = std::get<BalanceState>(state.task);
  BalanceState next;
  next.vel = kBalanceDamping * s.vel + kBalanceThrust * (action - 1);
  next.pos = s.pos + next.vel;
  if (std::abs(next.pos) > 1.0) {
    next.pos = std::clamp(next.pos, -1.0, 1.0);
    next.vel = 0.0;
  }

  StepResult r;
  r.state = state;
  r.state.task = next;
  r.state.step_index = state.step_index + 1;
  r.state.done = r.state.step_index == spec_.horizon;
  r.transition.obs = observe(state);
  r.transition.action = action;
  r.transition.next_obs = observe(r.state);
  r.transition.features = features_balance(next);
  r.transition.terminal = r.state.done;
  r.success = r.transition.features[3] > 0.5;
  return r;
}

double Env::episode_success(const EpisodeTrace& trace) const {
  if (trace.empty()) throw UsageError("episode_success on an empty trace");
  if (spec_.name == TaskName::kKeyDoorSparse) {
    for (const auto& t : trace.transitions) {
      if (t.features[3] > 0.5) return 1.0;
    }
    return 0.0;
  }
  int in_band = 0;
  for (int f : trace.success_flags) in_band += f;
  return static_cast<double>(in_band) / static_cast<double>(trace.size());
}

double Env::consec_score(const EpisodeTrace& trace) const {
  if (trace.empty()) throw UsageError("consec_score on an empty trace");
  const double horizon = spec_.horizon;
  if (spec_.name == TaskName::kKeyDoorSparse) {
    for (std::size_t k = 0; k < trace.size(); ++k) {
      if (trace.success_flags[k]) return (horizon - static_cast<double>(k)) / horizon;
    }
    return 0.0;
  }
  const int best = *std::max_element(trace.consec_counter.begin(), trace.consec_counter.end());
  return best / horizon;
}

int Env::scripted_action(const EnvState& state) const {
  if (const auto* s = std::get_if<KeyDoorState>(&state.task)) {
    const auto [tr, tc] = s->has_key ? door_cell() : key_cell();
    if (s->row > tr) return 0;
    if (s->row < tr) return 1;
    if (s->col > tc) return 2;
    if (s->col < tc) return 3;
    return 0;
  }
  const auto& b = std::get<BalanceState>(state.task);
  // Brake toward the position the damped velocity would coast to.
  const double coast = b.pos + b.vel * kBalanceDamping / (1.0 - kBalanceDamping);
  if (coast > 0.02) return 0;
  if (coast < -0.02) return 2;
  return 1;
}

}  // namespace phasedeploy::env
