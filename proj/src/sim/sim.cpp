#include "daml/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace daml::sim {

double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "heldout"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "heldout") return Split::kHeldout;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::string to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::kSuccess: return "success";
    case Outcome::kTaskIdentification: return "task_identification";
    case Outcome::kControl: return "control";
  }
  return "unknown";
}

SimConfig::SimConfig()
    : train_colors{{0.90, 0.15, 0.15}, {0.95, 0.55, 0.10}, {0.90, 0.85, 0.10},
                   {0.15, 0.75, 0.20}, {0.10, 0.80, 0.85}, {0.15, 0.30, 0.90},
                   {0.60, 0.20, 0.85}, {0.95, 0.40, 0.70}},
      heldout_colors{{0.55, 0.95, 0.30}, {0.10, 0.50, 0.50}, {0.98, 0.98, 0.98},
                     {0.50, 0.28, 0.10}} {}

DomainStyle DomainStyle::robot() { return DomainStyle{}; }

DomainStyle sample_demonstrator_style(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DomainStyle s;
  const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
  s.hue_shift_deg = sign * (30.0 + 60.0 * u(rng));
  s.brightness = -0.12 + 0.24 * u(rng);
  s.sprite = Sprite::kDisc;
  s.sprite_radius = 0.04 + 0.015 * u(rng);
  s.sprite_color = {0.80 + 0.1 * u(rng), 0.60 + 0.1 * u(rng), 0.45 + 0.1 * u(rng)};
  s.shift_x_px = -3.0 + 6.0 * u(rng);
  s.shift_y_px = -3.0 + 6.0 * u(rng);
  s.rotation_deg = -10.0 + 20.0 * u(rng);
  s.background = 1 + static_cast<int>(u(rng) * 3.0) % 3;
  return s;
}

ImageU8 quantize(const Image& image) {
  ImageU8 out{image.height, image.width, std::vector<std::uint8_t>(image.pixels.size())};
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

namespace {

// Demo records are persisted as float32; keep in-memory values identical.
double f32(double x) { return static_cast<double>(static_cast<float>(x)); }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Vec2 unit_or(Vec2 v, Vec2 fallback) {
  const double n = norm(v);
  return n > 1e-12 ? (1.0 / n) * v : fallback;
}

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  const double t = len2 > 0.0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (a + t * ab));
}

Vec2 clamp_to(Vec2 p, double lo, double hi) {
  return {std::clamp(p.x, lo, hi), std::clamp(p.y, lo, hi)};
}

bool placement_ok(Vec2 target, Vec2 distractor, Vec2 goal) {
  return norm(target - distractor) >= 0.25 && segment_distance(distractor, target, goal) >= 0.2 &&
         norm(distractor - goal) >= 0.3;
}

// Slides `obj` along the unit vector `dir` until it leaves the disc of
// `radius` around `pusher`.
Vec2 resolve_contact(Vec2 pusher, Vec2 obj, double radius, Vec2 dir) {
  const Vec2 rel = obj - pusher;
  const double c = dot(rel, rel) - radius * radius;
  if (c >= 0.0) return obj;
  const double b = dot(rel, dir);
  return obj + (-b + std::sqrt(b * b - c)) * dir;
}

bool inside_shape(Shape shape, Vec2 d, double r) {
  const double ax = std::fabs(d.x), ay = std::fabs(d.y);
  switch (shape) {
    case Shape::kDisc: return ax * ax + ay * ay < r * r;
    case Shape::kSquare: return std::max(ax, ay) < 0.85 * r;
    case Shape::kTriangle: {
      const double level = (d.y + r) / (1.8 * r);
      return level >= 0.0 && level <= 1.0 && ax < level * r;
    }
    case Shape::kDiamond: return ax + ay < 1.15 * r;
    case Shape::kCross: return (ax < 0.35 * r && ay < r) || (ay < 0.35 * r && ax < r);
  }
  return false;
}

Color background_color(double u, double v, int id) {
  if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) return {0.2, 0.2, 0.2};
  switch (id) {
    case 1: {
      const double s = (static_cast<int>(std::floor(u * 8.0)) % 2) ? 0.50 : 0.36;
      return {0.9 * s, 0.95 * s, 1.05 * s};
    }
    case 2: {
      const int k = static_cast<int>(std::floor(u * 6.0)) + static_cast<int>(std::floor(v * 6.0));
      const double s = (k % 2) ? 0.50 : 0.32;
      return {1.08 * s, s, 0.85 * s};
    }
    case 3: {
      const double s = 0.30 + 0.30 * v;
      return {s, 1.05 * s, s};
    }
    default: return {0.45, 0.45, 0.45};
  }
}

struct HueRotation {
  std::array<double, 9> m;
  explicit HueRotation(double deg) {
    const double a = deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a), k = (1.0 - c) / 3.0, q = std::sqrt(1.0 / 3.0) * s;
    m = {c + k, k - q, k + q, k + q, c + k, k - q, k - q, k + q, c + k};
  }
  Color apply(const Color& x) const {
    return {m[0] * x[0] + m[1] * x[1] + m[2] * x[2], m[3] * x[0] + m[4] * x[1] + m[5] * x[2],
            m[6] * x[0] + m[7] * x[1] + m[8] * x[2]};
  }
};

}  // namespace

TaskSpec generate_task(std::mt19937_64& rng, Split split, const SimConfig& cfg) {
  const auto& colors = split == Split::kTrain ? cfg.train_colors : cfg.heldout_colors;
  const auto& shapes = split == Split::kTrain ? cfg.train_shapes : cfg.heldout_shapes;
  if (colors.empty() || shapes.empty()) {
    throw std::invalid_argument("empty appearance pool for split " + to_string(split));
  }
  if (colors.size() * shapes.size() < 2) {
    throw std::invalid_argument("appearance pool for split " + to_string(split) +
                                " cannot produce two distinct objects");
  }
  auto pick = [&rng](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };
  TaskSpec task;
  task.split = split;
  task.goal = cfg.goal;
  do {
    task.target.color = colors[pick(colors.size())];
    task.target.shape = shapes[pick(shapes.size())];
    task.distractor.color = colors[pick(colors.size())];
    task.distractor.shape = shapes[pick(shapes.size())];
  } while (task.target.color == task.distractor.color && task.target.shape == task.distractor.shape);
  do {
    task.target.position = {uniform(rng, 0.15, 0.85), uniform(rng, 0.45, 0.75)};
    task.distractor.position = {uniform(rng, 0.15, 0.85), uniform(rng, 0.45, 0.75)};
  } while (!placement_ok(task.target.position, task.distractor.position, task.goal));
  return task;
}

TaskPool TaskPool::generate(std::uint64_t seed, int n_train, int n_heldout, const SimConfig& cfg) {
  std::mt19937_64 rng(seed);
  TaskPool pool;
  for (int i = 0; i < n_train; ++i) pool.train.push_back(generate_task(rng, Split::kTrain, cfg));
  for (int i = 0; i < n_heldout; ++i) pool.heldout.push_back(generate_task(rng, Split::kHeldout, cfg));
  return pool;
}

TaskSpec sample_task(std::mt19937_64& rng, Split split, const TaskPool& pool) {
  const auto& tasks = split == Split::kTrain ? pool.train : pool.heldout;
  if (tasks.empty()) throw std::invalid_argument("task pool for split " + to_string(split) + " is empty");
  return tasks[std::uniform_int_distribution<std::size_t>(0, tasks.size() - 1)(rng)];
}

WorldState initial_state(const TaskSpec& task, std::mt19937_64& rng, const SimConfig& cfg) {
  WorldState s;
  const double j = cfg.placement_jitter;
  s.gripper = {uniform(rng, 0.3, 0.7), uniform(rng, 0.88, 0.95)};
  s.target = task.target.position;
  s.distractor = task.distractor.position;
  if (j > 0.0) {
    s.target = s.target + Vec2{uniform(rng, -j, j), uniform(rng, -j, j)};
    s.distractor = s.distractor + Vec2{uniform(rng, -j, j), uniform(rng, -j, j)};
  }
  return s;
}

WorldState step(const WorldState& state, const Action& action, const SimConfig& cfg) {
  WorldState next = state;
  next.t = state.t + 1;
  const Vec2 cmd{std::clamp(action.vx, -1.0, 1.0), std::clamp(action.vy, -1.0, 1.0)};
  const Vec2 moved = clamp_to(state.gripper + cfg.step_size * cmd, 0.0, 1.0);
  const Vec2 motion = unit_or(moved - state.gripper, {0.0, -1.0});
  next.gripper = moved;

  const double r = cfg.object_radius;
  const double cr = cfg.contact_radius;
  next.target = resolve_contact(moved, next.target, cr, motion);
  next.distractor = resolve_contact(moved, next.distractor, cr, motion);
  // A pushed object shoves the other one along.
  next.distractor = resolve_contact(next.target, next.distractor, 2.0 * r, motion);
  next.target = resolve_contact(next.distractor, next.target, 2.0 * r, motion);
  next.target = clamp_to(next.target, r, 1.0 - r);
  next.distractor = clamp_to(next.distractor, r, 1.0 - r);
  // Objects pinned at the table edge push the gripper back instead.
  next.gripper = resolve_contact(next.target, next.gripper, cr, -1.0 * motion);
  next.gripper = resolve_contact(next.distractor, next.gripper, cr, -1.0 * motion);
  next.gripper = clamp_to(next.gripper, 0.0, 1.0);
  next.gripper_vel = (1.0 / cfg.step_size) * (next.gripper - state.gripper);
  return next;
}

Image render(const WorldState& state, const TaskSpec& task, const DomainStyle& style,
             const SimConfig& cfg, double brightness_noise) {
  const int n = cfg.image_size;
  Image img{n, n, std::vector<double>(static_cast<std::size_t>(n * n * 3))};
  const HueRotation hue(style.hue_shift_deg);
  const double rot = style.rotation_deg * std::numbers::pi / 180.0;
  const double cr = std::cos(rot), sr = std::sin(rot);
  const double r = cfg.object_radius;
  constexpr int kSuper = 2;

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Color acc{0.0, 0.0, 0.0};
      for (int si = 0; si < kSuper; ++si) {
        for (int sj = 0; sj < kSuper; ++sj) {
          // Output pixel -> table coordinates through the inverse view transform.
          const double px = j + (sj + 0.5) / kSuper - style.shift_x_px - 0.5 * n;
          const double py = i + (si + 0.5) / kSuper - style.shift_y_px - 0.5 * n;
          const double sx = cr * px + sr * py + 0.5 * n;
          const double sy = -sr * px + cr * py + 0.5 * n;
          const Vec2 p{sx / n, sy / n};
          Color c = background_color(p.x, p.y, style.background);
          if (inside_shape(task.distractor.shape, p - state.distractor, r)) c = task.distractor.color;
          if (inside_shape(task.target.shape, p - state.target, r)) c = task.target.color;
          const Vec2 g = p - state.gripper;
          const bool on_sprite = style.sprite == Sprite::kSquare
                                     ? std::max(std::fabs(g.x), std::fabs(g.y)) < style.sprite_radius
                                     : norm(g) < style.sprite_radius;
          if (on_sprite) c = style.sprite_color;
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      }
      for (int k = 0; k < 3; ++k) acc[k] /= kSuper * kSuper;
      const Color shifted = hue.apply(acc);
      for (int k = 0; k < 3; ++k) {
        img.pixels[(i * n + j) * 3 + k] =
            std::clamp(shifted[k] + style.brightness + brightness_noise, 0.0, 1.0);
      }
    }
  }
  return img;
}

Action scripted_expert(const WorldState& state, const TaskSpec& task, const SimConfig& cfg) {
  const Vec2 p = state.target;
  const Vec2 q = task.goal;
  const Vec2 g = state.gripper;
  const double cr = cfg.contact_radius;
  Action a;
  a.gripper_closed = true;

  const Vec2 to_goal = q - p;
  const double dist = norm(to_goal);
  const Vec2 d = unit_or(to_goal, {0.0, -1.0});
  const Vec2 perp{-d.y, d.x};
  const Vec2 rel = g - p;
  const double along = dot(rel, d);
  const double lateral = dot(rel, perp);

  const bool done = dist < 0.25 * cfg.goal_radius;
  Vec2 waypoint;
  if (done) {
    // Done: hold just behind the object.
    waypoint = p - (cr + 0.01) * d;
  } else if (along < -0.5 * cr && std::fabs(lateral) < 0.5 * cr) {
    // Behind the object: push through, steering back onto the push line and
    // slowing near the goal.
    const double advance = std::min(cfg.step_size, dist);
    waypoint = p - (cr - 0.005) * d + advance * d;
  } else {
    // Orbit the object on a circle, turning toward the push position by at
    // most kTurn radians per step.
    constexpr double kTurn = 0.5;
    const double orbit = cr + 0.03;
    const double angle = std::atan2(lateral, -along);
    const double next = angle - std::copysign(std::min(std::fabs(angle), kTurn), angle);
    waypoint = p + orbit * (std::cos(next) * (-1.0 * d) + std::sin(next) * perp);
  }

  // Single detour around the distractor.
  const double clearance = cr + 0.02;
  if (segment_distance(state.distractor, g, waypoint) < clearance) {
    const Vec2 heading = unit_or(waypoint - g, d);
    const Vec2 side_dir{-heading.y, heading.x};
    const double side = dot(state.distractor - g, side_dir) > 0.0 ? -1.0 : 1.0;
    waypoint = state.distractor + side * (clearance + 0.04) * side_dir;
  }

  // Proportional command, scaled down (not clipped per axis) to the speed
  // limit; holding at the goal only creeps.
  const double limit = done ? 0.04 : 1.0;
  Vec2 v = (1.0 / cfg.step_size) * (waypoint - g);
  const double speed = norm(v);
  if (speed > limit) v = (limit / speed) * v;
  a.vx = v.x;
  a.vy = v.y;
  return a;
}

int steps_in_goal(const Trajectory& trajectory, const TaskSpec& task, const SimConfig& cfg) {
  int count = 0;
  for (std::size_t t = 1; t < trajectory.states.size(); ++t) {
    if (norm(trajectory.states[t].target - task.goal) <= cfg.goal_radius) ++count;
  }
  return count;
}

bool success(const Trajectory& trajectory, const TaskSpec& task, const SimConfig& cfg) {
  return steps_in_goal(trajectory, task, cfg) >= cfg.success_steps;
}

Outcome classify(const Trajectory& trajectory, const TaskSpec& task, const SimConfig& cfg) {
  if (success(trajectory, task, cfg)) return Outcome::kSuccess;
  if (trajectory.states.empty()) return Outcome::kControl;
  const auto& first = trajectory.states.front();
  const auto& last = trajectory.states.back();
  const double target_moved = norm(last.target - first.target);
  const double distractor_moved = norm(last.distractor - first.distractor);
  return distractor_moved > target_moved ? Outcome::kTaskIdentification : Outcome::kControl;
}

Trajectory expert_rollout(const TaskSpec& task, std::mt19937_64& rng, const SimConfig& cfg) {
  Trajectory traj;
  traj.states.push_back(initial_state(task, rng, cfg));
  for (int t = 0; t < cfg.horizon; ++t) {
    const auto a = scripted_expert(traj.states.back(), task, cfg);
    traj.actions.push_back(a);
    traj.states.push_back(step(traj.states.back(), a, cfg));
  }
  return traj;
}

Demo gen_demo(const TaskSpec& task, const DomainStyle& style, bool with_actions,
              std::mt19937_64& rng, const SimConfig& cfg) {
  constexpr int kSettleSteps = 5;
  for (int attempt = 0; attempt < cfg.expert_retries; ++attempt) {
    std::vector<WorldState> states{initial_state(task, rng, cfg)};
    std::vector<Action> actions;
    int settled = 0;
    while (static_cast<int>(actions.size()) < cfg.max_demo_len) {
      const bool at_goal = norm(states.back().target - task.goal) <= 0.5 * cfg.goal_radius;
      settled = at_goal ? settled + 1 : 0;
      if (settled > kSettleSteps && static_cast<int>(actions.size()) >= cfg.min_demo_len) break;
      const auto a = scripted_expert(states.back(), task, cfg);
      actions.push_back(a);
      Action executed = a;
      if (cfg.demo_action_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.demo_action_noise);
        executed.vx += noise(rng);
        executed.vy += noise(rng);
      }
      states.push_back(step(states.back(), executed, cfg));
    }
    if (settled <= kSettleSteps) continue;

    const std::size_t len = actions.size();
    if (!with_actions) {
      HumanDemo demo;
      for (std::size_t t = 0; t < len; ++t) demo.frames.push_back(quantize(render(states[t], task, style, cfg)));
      return demo;
    }
    RobotDemo demo;
    for (std::size_t t = 0; t < len; ++t) {
      const auto& s = states[t];
      demo.frames.push_back(quantize(render(s, task, style, cfg)));
      demo.states.push_back({f32(s.gripper.x), f32(s.gripper.y), f32(s.gripper_vel.x), f32(s.gripper_vel.y)});
      demo.actions.push_back({f32(actions[t].vx), f32(actions[t].vy), actions[t].gripper_closed ? 1.0 : 0.0});
    }
    demo.final_pose = {f32(states[len - 1].gripper.x), f32(states[len - 1].gripper.y)};
    return demo;
  }
  throw std::runtime_error("scripted expert failed " + std::to_string(cfg.expert_retries) +
                           " times on a task");
}

}  // namespace daml::sim
