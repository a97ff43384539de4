#pragma once

// Desk-scale differentiable tasks with exact hand-derived gradients.
//
//   quadratic       least squares a^T x ~ y with an ill-conditioned input
//                   covariance; the objective is a convex quadratic bowl
//   mlp_regression  one tanh hidden layer fitted to a random teacher network
//   bigram_lm       softmax next-token model over a small alphabet, trained on
//                   a corpus sampled from a random Markov chain
//
// A Task is immutable after construction and may be shared between runs.

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "trainguard/governor.hpp"
#include "trainguard/rng.hpp"

namespace trainguard {

enum class TaskKind : std::uint8_t { Quadratic, MlpRegression, BigramLm };

std::string_view to_string(TaskKind kind) noexcept;
TaskKind parse_task_kind(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::BigramLm;
  // quadratic
  std::uint32_t dim = 16;
  double condition = 1e4;
  // mlp_regression
  std::uint32_t input_dim = 8;
  std::uint32_t hidden = 16;
  std::uint32_t output_dim = 1;
  // bigram_lm
  std::uint32_t alphabet = 16;
  double sharpness = 2.0;  // std-dev of the teacher logits
  // shared
  std::uint32_t train_size = 4096;
  std::uint32_t eval_size = 1024;
  double noise = 0.0;  // label noise for the regression tasks

  void validate() const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct Batch {
  std::size_t rows = 0;
  // Regression tasks: row-major inputs (rows x input_cols) and targets
  // (rows x target_cols).
  std::size_t input_cols = 0;
  std::vector<double> inputs;
  std::size_t target_cols = 0;
  std::vector<double> targets;
  // bigram_lm: context and next-token indices.
  std::vector<std::uint32_t> context;
  std::vector<std::uint32_t> next;
  // Multiplies the batch loss (and so its gradient); used by outlier
  // injection on token tasks, where targets cannot be rescaled.
  double loss_weight = 1.0;
  // Post-hoc gradient multiplier applied by the harness (gradient bursts).
  double gradient_gain = 1.0;
  bool outlier_flag = false;

  friend bool operator==(const Batch&, const Batch&) = default;
};

struct EvalResult {
  double eval_loss = 0.0;
  double perplexity = 1.0;  // exp(eval_loss)
};

class Task {
 public:
  /// Deterministic in (spec, seed). Throws ConfigError for invalid dims.
  static Task make(const TaskSpec& spec, std::uint64_t seed);

  const TaskSpec& spec() const noexcept { return spec_; }
  TaskKind kind() const noexcept { return spec_.kind; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_params() const noexcept { return init_.size(); }
  const std::vector<ParamGroup>& layout() const noexcept { return layout_; }
  const std::vector<double>& initial_params() const noexcept { return init_; }
  const Batch& eval_set() const noexcept { return eval_; }

  /// Parameters of the data-generating model (x* for quadratic, the teacher
  /// network for mlp_regression, teacher logits for bigram_lm).
  const std::vector<double>& teacher() const noexcept { return teacher_; }

  /// Mean batch loss; writes the exact gradient into `grads`. Overflow
  /// propagates as non-finite values.
  double forward_backward(std::span<const double> params, const Batch& batch,
                          std::span<double> grads) const;

  /// Loss only.
  double loss(std::span<const double> params, const Batch& batch) const;

  EvalResult evaluate(std::span<const double> params) const;

  /// Draws `batch_size` training examples, advancing `rng`.
  Batch sample_batch(RngState& rng, std::size_t batch_size) const;

 private:
  Task() = default;

  TaskSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<double> init_;
  std::vector<ParamGroup> layout_;
  std::vector<double> teacher_;
  Batch train_;  // pool the stream samples from
  Batch eval_;
};

inline Task make_task(const TaskSpec& spec, std::uint64_t seed) { return Task::make(spec, seed); }

inline std::pair<double, std::vector<double>> forward_backward(const Task& task,
                                                               std::span<const double> params,
                                                               const Batch& batch) {
  std::vector<double> grads(task.num_params());
  const double loss = task.forward_backward(params, batch, grads);
  return {loss, std::move(grads)};
}

inline EvalResult evaluate(const Task& task, std::span<const double> params) {
  return task.evaluate(params);
}

inline std::pair<Batch, RngState> sample_batch(const Task& task, RngState rng,
                                               std::size_t batch_size) {
  Batch b = task.sample_batch(rng, batch_size);
  return {std::move(b), rng};
}

/// Stream for training batches at `step`: reproducible from (seed, step).
RngState batch_stream(std::uint64_t seed, std::uint64_t step) noexcept;

}  // namespace trainguard
