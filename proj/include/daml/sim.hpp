#pragma once

// Tabletop pushing world on the unit square. y grows downward, matching
// image rows, so the default goal near y = 0.15 sits at the top of the frame.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace daml::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

double dot(Vec2 a, Vec2 b);
double norm(Vec2 a);

using Color = std::array<double, 3>;

enum class Split : std::uint8_t { kTrain = 0, kHeldout = 1 };
std::string to_string(Split split);
Split parse_split(const std::string& s);

enum class Shape : std::uint8_t { kDisc = 0, kSquare = 1, kTriangle = 2, kDiamond = 3, kCross = 4 };

struct SimConfig {
  int image_size = 24;
  double step_size = 0.05;
  double contact_radius = 0.08;
  double object_radius = 0.06;
  double goal_radius = 0.1;
  Vec2 goal{0.5, 0.15};
  int horizon = 100;
  int success_steps = 10;
  int min_demo_len = 30;
  int max_demo_len = 80;
  /// Per-demo uniform jitter applied to the task's object placements.
  double placement_jitter = 0.02;
  int expert_retries = 20;
  /// Std of Gaussian noise added to the executed expert velocity while
  /// collecting demos; recorded actions stay noise-free.
  double demo_action_noise = 0.3;
  std::vector<Color> train_colors;
  std::vector<Color> heldout_colors;
  std::vector<Shape> train_shapes{Shape::kDisc, Shape::kSquare, Shape::kTriangle};
  std::vector<Shape> heldout_shapes{Shape::kDiamond, Shape::kCross};

  SimConfig();
};

struct ObjectSpec {
  Shape shape = Shape::kDisc;
  Color color{};
  Vec2 position;
};

struct TaskSpec {
  ObjectSpec target;
  ObjectSpec distractor;
  Vec2 goal;
  Split split = Split::kTrain;
};

enum class Sprite : std::uint8_t { kSquare = 0, kDisc = 1 };

struct DomainStyle {
  double hue_shift_deg = 0.0;
  double brightness = 0.0;
  Sprite sprite = Sprite::kSquare;
  double sprite_radius = 0.035;
  Color sprite_color{0.1, 0.1, 0.1};
  double shift_x_px = 0.0;
  double shift_y_px = 0.0;
  double rotation_deg = 0.0;
  int background = 0;

  static DomainStyle robot();
};

/// Draws a demonstrator-domain style: disc sprite, nonzero hue rotation,
/// small view transform, one of the alternate backgrounds.
DomainStyle sample_demonstrator_style(std::mt19937_64& rng);

struct WorldState {
  Vec2 gripper;
  Vec2 gripper_vel;
  Vec2 target;
  Vec2 distractor;
  int t = 0;
};

struct Action {
  double vx = 0.0;
  double vy = 0.0;
  bool gripper_closed = true;
};

/// H x W x 3 row-major image with values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;
};

/// 8-bit storage form used for datasets and policy inputs.
struct ImageU8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

ImageU8 quantize(const Image& image);

struct HumanDemo {
  std::vector<ImageU8> frames;
};

/// Per frame: state (gripper x, y, vx, vy) and action (vx, vy, gripper).
struct RobotDemo {
  std::vector<ImageU8> frames;
  std::vector<std::array<double, 4>> states;
  std::vector<std::array<double, 3>> actions;
  std::array<double, 2> final_pose{};
};

using Demo = std::variant<HumanDemo, RobotDemo>;

/// Builds a fresh task from the split's appearance pools.
TaskSpec generate_task(std::mt19937_64& rng, Split split, const SimConfig& cfg);

/// Fixed per-split task sets; `sample_task` draws from them.
struct TaskPool {
  std::vector<TaskSpec> train;
  std::vector<TaskSpec> heldout;

  static TaskPool generate(std::uint64_t seed, int n_train, int n_heldout, const SimConfig& cfg);
};

TaskSpec sample_task(std::mt19937_64& rng, Split split, const TaskPool& pool);

WorldState initial_state(const TaskSpec& task, std::mt19937_64& rng, const SimConfig& cfg);

WorldState step(const WorldState& state, const Action& action, const SimConfig& cfg);

/// `brightness_noise` is added to every channel before clamping (training
/// augmentation; 0 disables it).
Image render(const WorldState& state, const TaskSpec& task, const DomainStyle& style,
             const SimConfig& cfg, double brightness_noise = 0.0);

Action scripted_expert(const WorldState& state, const TaskSpec& task, const SimConfig& cfg);

struct Trajectory {
  /// states[0] is the reset state; states[t] follows the t-th action.
  std::vector<WorldState> states;
  std::vector<Action> actions;
};

bool success(const Trajectory& trajectory, const TaskSpec& task, const SimConfig& cfg);
int steps_in_goal(const Trajectory& trajectory, const TaskSpec& task, const SimConfig& cfg);

enum class Outcome : std::uint8_t { kSuccess = 0, kTaskIdentification = 1, kControl = 2 };
std::string to_string(Outcome outcome);
/// Unsuccessful rollouts where the distractor moved farther than the target
/// count as task-identification failures; the rest are control failures.
Outcome classify(const Trajectory& trajectory, const TaskSpec& task, const SimConfig& cfg);

/// Runs the scripted expert from a jittered reset until the target settles on
/// the goal. Throws if the expert fails `expert_retries` times.
Demo gen_demo(const TaskSpec& task, const DomainStyle& style, bool with_actions,
              std::mt19937_64& rng, const SimConfig& cfg);

/// Expert rollout over the full horizon (used for the expert success oracle).
Trajectory expert_rollout(const TaskSpec& task, std::mt19937_64& rng, const SimConfig& cfg);

}  // namespace daml::sim
