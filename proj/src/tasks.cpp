#include "trainguard/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace trainguard {
namespace {

enum Stream : std::uint64_t {
  kTeacherStream = 1,
  kInitStream = 2,
  kTrainDataStream = 3,
  kEvalDataStream = 4,
  kBatchStream = 5,
};

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

// Random orthogonal matrix (row-major, d x d) by Gram-Schmidt on Gaussian rows.
std::vector<double> random_orthogonal(std::size_t d, CounterRng& rng) {
  std::vector<double> q(d * d);
  for (std::size_t i = 0; i < d; ++i) {
    double* row = &q[i * d];
    double norm = 0.0;
    do {
      for (std::size_t k = 0; k < d; ++k) {
        row[k] = rng.normal();
      }
      for (std::size_t j = 0; j < i; ++j) {
        const double* prev = &q[j * d];
        const double proj = dot(row, prev, d);
        for (std::size_t k = 0; k < d; ++k) {
          row[k] -= proj * prev[k];
        }
      }
      norm = std::sqrt(dot(row, row, d));
    } while (norm < 1e-8);
    for (std::size_t k = 0; k < d; ++k) {
      row[k] /= norm;
    }
  }
  return q;
}

// ---- quadratic ------------------------------------------------------------

struct QuadraticModel {
  std::size_t d;
  std::vector<double> mixing;  // rows of Q scaled: input a = mixing^T z

  std::vector<double> draw_inputs(std::size_t rows, CounterRng& rng) const {
    std::vector<double> out(rows * d, 0.0);
    std::vector<double> z(d);
    for (std::size_t r = 0; r < rows; ++r) {
      for (double& zi : z) {
        zi = rng.normal();
      }
      double* a = &out[r * d];
      for (std::size_t k = 0; k < d; ++k) {
        const double* m = &mixing[k * d];
        for (std::size_t j = 0; j < d; ++j) {
          a[j] += z[k] * m[j];
        }
      }
    }
    return out;
  }
};

double quadratic_loss_grad(std::span<const double> x, const Batch& b, double* grads) {
  const std::size_t d = x.size();
  if (grads != nullptr) {
    std::fill(grads, grads + d, 0.0);
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < b.rows; ++r) {
    const double* a = &b.inputs[r * d];
    const double resid = dot(a, x.data(), d) - b.targets[r];
    loss += 0.5 * resid * resid;
    if (grads != nullptr) {
      for (std::size_t j = 0; j < d; ++j) {
        grads[j] += resid * a[j];
      }
    }
  }
  const double inv = b.loss_weight / static_cast<double>(b.rows);
  if (grads != nullptr) {
    for (std::size_t j = 0; j < d; ++j) {
      grads[j] *= inv;
    }
  }
  return loss * inv;
}

// ---- mlp_regression -------------------------------------------------------
//
// Flat layout: W1 (hidden x in), b1 (hidden), W2 (out x hidden), b2 (out).

struct MlpShape {
  std::size_t in, hidden, out;
  std::size_t w1() const { return 0; }
  std::size_t b1() const { return hidden * in; }
  std::size_t w2() const { return b1() + hidden; }
  std::size_t b2() const { return w2() + out * hidden; }
  std::size_t size() const { return b2() + out; }
};

void mlp_forward(const MlpShape& s, std::span<const double> p, const double* x, double* h,
                 double* y) {
  for (std::size_t j = 0; j < s.hidden; ++j) {
    h[j] = std::tanh(dot(&p[s.w1() + j * s.in], x, s.in) + p[s.b1() + j]);
  }
  for (std::size_t o = 0; o < s.out; ++o) {
    y[o] = dot(&p[s.w2() + o * s.hidden], h, s.hidden) + p[s.b2() + o];
  }
}

double mlp_loss_grad(const MlpShape& s, std::span<const double> p, const Batch& b,
                     double* grads) {
  if (grads != nullptr) {
    std::fill(grads, grads + s.size(), 0.0);
  }
  std::vector<double> h(s.hidden), y(s.out), dy(s.out), dz(s.hidden);
  const double inv = b.loss_weight / static_cast<double>(b.rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < b.rows; ++r) {
    const double* x = &b.inputs[r * s.in];
    const double* t = &b.targets[r * s.out];
    mlp_forward(s, p, x, h.data(), y.data());
    for (std::size_t o = 0; o < s.out; ++o) {
      const double resid = y[o] - t[o];
      loss += 0.5 * resid * resid;
      dy[o] = resid * inv;
    }
    if (grads == nullptr) {
      continue;
    }
    for (std::size_t o = 0; o < s.out; ++o) {
      double* gw2 = &grads[s.w2() + o * s.hidden];
      for (std::size_t j = 0; j < s.hidden; ++j) {
        gw2[j] += dy[o] * h[j];
      }
      grads[s.b2() + o] += dy[o];
    }
    for (std::size_t j = 0; j < s.hidden; ++j) {
      double back = 0.0;
      for (std::size_t o = 0; o < s.out; ++o) {
        back += p[s.w2() + o * s.hidden + j] * dy[o];
      }
      dz[j] = back * (1.0 - h[j] * h[j]);
    }
    for (std::size_t j = 0; j < s.hidden; ++j) {
      double* gw1 = &grads[s.w1() + j * s.in];
      for (std::size_t k = 0; k < s.in; ++k) {
        gw1[k] += dz[j] * x[k];
      }
      grads[s.b1() + j] += dz[j];
    }
  }
  return loss * inv;
}

// ---- bigram_lm ------------------------------------------------------------
//
// Params are an alphabet x alphabet table of logits; row c scores the token
// following c.

double bigram_loss_grad(std::size_t alphabet, std::span<const double> w, const Batch& b,
                        double* grads) {
  if (grads != nullptr) {
    std::fill(grads, grads + alphabet * alphabet, 0.0);
  }
  const double inv = b.loss_weight / static_cast<double>(b.rows);
  std::vector<double> probs(alphabet);
  double loss = 0.0;
  for (std::size_t r = 0; r < b.rows; ++r) {
    const std::size_t c = b.context[r];
    const std::size_t n = b.next[r];
    const double* row = &w[c * alphabet];
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < alphabet; ++k) {
      peak = std::max(peak, row[k]);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < alphabet; ++k) {
      probs[k] = std::exp(row[k] - peak);
      z += probs[k];
    }
    const double log_z = peak + std::log(z);
    loss += log_z - row[n];
    if (grads != nullptr) {
      double* g = &grads[c * alphabet];
      for (std::size_t k = 0; k < alphabet; ++k) {
        g[k] += (probs[k] / z) * inv;
      }
      g[n] -= inv;
    }
  }
  return loss * inv;
}

std::uint32_t draw_categorical(const double* cdf, std::size_t n, CounterRng& rng) {
  const double u = rng.uniform();
  for (std::size_t k = 0; k < n; ++k) {
    if (u < cdf[k]) {
      return static_cast<std::uint32_t>(k);
    }
  }
  return static_cast<std::uint32_t>(n - 1);
}

}  // namespace

std::string_view to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::Quadratic:
      return "quadratic";
    case TaskKind::MlpRegression:
      return "mlp_regression";
    case TaskKind::BigramLm:
      return "bigram_lm";
  }
  return "bigram_lm";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "quadratic") return TaskKind::Quadratic;
  if (name == "mlp_regression") return TaskKind::MlpRegression;
  if (name == "bigram_lm") return TaskKind::BigramLm;
  throw ConfigError("kind", "unknown task kind '" + std::string(name) + "'");
}

void TaskSpec::validate() const {
  if (train_size < 1) throw ConfigError("train_size", "must be >= 1");
  if (eval_size < 1) throw ConfigError("eval_size", "must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("noise", "must be >= 0");
  switch (kind) {
    case TaskKind::Quadratic:
      if (dim < 1) throw ConfigError("dim", "must be >= 1");
      if (!(condition >= 1.0)) throw ConfigError("condition", "must be >= 1");
      break;
    case TaskKind::MlpRegression:
      if (input_dim < 1) throw ConfigError("input_dim", "must be >= 1");
      if (hidden < 1) throw ConfigError("hidden", "must be >= 1");
      if (output_dim < 1) throw ConfigError("output_dim", "must be >= 1");
      break;
    case TaskKind::BigramLm:
      if (alphabet < 2) throw ConfigError("alphabet", "must be >= 2");
      if (!(sharpness >= 0.0)) throw ConfigError("sharpness", "must be >= 0");
      break;
  }
}

Task Task::make(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  Task task;
  task.spec_ = spec;
  task.seed_ = seed;
  CounterRng teacher_rng(seed, kTeacherStream);
  CounterRng init_rng(seed, kInitStream);
  CounterRng train_rng(seed, kTrainDataStream);
  CounterRng eval_rng(seed, kEvalDataStream);

  switch (spec.kind) {
    case TaskKind::Quadratic: {
      const std::size_t d = spec.dim;
      QuadraticModel model{d, random_orthogonal(d, teacher_rng)};
      // Eigenvalues of the input covariance, log-spaced over [1/condition, 1].
      for (std::size_t k = 0; k < d; ++k) {
        const double frac = d > 1 ? static_cast<double>(k) / static_cast<double>(d - 1) : 0.0;
        const double root = std::sqrt(std::pow(spec.condition, frac - 1.0));
        for (std::size_t j = 0; j < d; ++j) {
          model.mixing[k * d + j] *= root;
        }
      }
      task.teacher_.resize(d);
      for (double& x : task.teacher_) {
        x = teacher_rng.normal();
      }
      task.init_.resize(d);
      for (double& x : task.init_) {
        x = 0.1 * init_rng.normal();
      }
      task.layout_ = {ParamGroup{0, d}};
      auto fill = [&](Batch& b, std::size_t rows, CounterRng& rng) {
        b.rows = rows;
        b.input_cols = d;
        b.target_cols = 1;
        b.inputs = model.draw_inputs(rows, rng);
        b.targets.resize(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          b.targets[r] = dot(&b.inputs[r * d], task.teacher_.data(), d);
          if (spec.noise > 0.0) {
            b.targets[r] += spec.noise * rng.normal();
          }
        }
      };
      fill(task.train_, spec.train_size, train_rng);
      fill(task.eval_, spec.eval_size, eval_rng);
      break;
    }
    case TaskKind::MlpRegression: {
      const MlpShape s{spec.input_dim, spec.hidden, spec.output_dim};
      auto init_net = [&](std::vector<double>& p, CounterRng& rng, double bias_scale) {
        p.assign(s.size(), 0.0);
        const double w1_scale = 1.0 / std::sqrt(static_cast<double>(s.in));
        const double w2_scale = 1.0 / std::sqrt(static_cast<double>(s.hidden));
        for (std::size_t i = 0; i < s.hidden * s.in; ++i) p[s.w1() + i] = w1_scale * rng.normal();
        for (std::size_t i = 0; i < s.hidden; ++i) p[s.b1() + i] = bias_scale * rng.normal();
        for (std::size_t i = 0; i < s.out * s.hidden; ++i) p[s.w2() + i] = w2_scale * rng.normal();
        for (std::size_t i = 0; i < s.out; ++i) p[s.b2() + i] = bias_scale * rng.normal();
      };
      init_net(task.teacher_, teacher_rng, 0.5);
      init_net(task.init_, init_rng, 0.0);
      task.layout_ = {ParamGroup{s.w1(), s.hidden * s.in}, ParamGroup{s.b1(), s.hidden},
                      ParamGroup{s.w2(), s.out * s.hidden}, ParamGroup{s.b2(), s.out}};
      auto fill = [&](Batch& b, std::size_t rows, CounterRng& rng) {
        b.rows = rows;
        b.input_cols = s.in;
        b.target_cols = s.out;
        b.inputs.resize(rows * s.in);
        b.targets.resize(rows * s.out);
        std::vector<double> h(s.hidden);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t k = 0; k < s.in; ++k) b.inputs[r * s.in + k] = rng.normal();
          mlp_forward(s, task.teacher_, &b.inputs[r * s.in], h.data(), &b.targets[r * s.out]);
          if (spec.noise > 0.0) {
            for (std::size_t o = 0; o < s.out; ++o) b.targets[r * s.out + o] += spec.noise * rng.normal();
          }
        }
      };
      fill(task.train_, spec.train_size, train_rng);
      fill(task.eval_, spec.eval_size, eval_rng);
      break;
    }
    case TaskKind::BigramLm: {
      const std::size_t a = spec.alphabet;
      task.teacher_.resize(a * a);
      for (double& x : task.teacher_) {
        x = spec.sharpness * teacher_rng.normal();
      }
      std::vector<double> cdf(a * a);
      for (std::size_t c = 0; c < a; ++c) {
        const double* row = &task.teacher_[c * a];
        const double peak = *std::max_element(row, row + a);
        double z = 0.0;
        for (std::size_t k = 0; k < a; ++k) {
          z += std::exp(row[k] - peak);
          cdf[c * a + k] = z;
        }
        for (std::size_t k = 0; k < a; ++k) {
          cdf[c * a + k] /= z;
        }
      }
      task.init_.assign(a * a, 0.0);
      task.layout_.reserve(a);
      for (std::size_t c = 0; c < a; ++c) {
        task.layout_.push_back(ParamGroup{c * a, a});
      }
      auto fill = [&](Batch& b, std::size_t rows, CounterRng& rng) {
        b.rows = rows;
        b.context.resize(rows);
        b.next.resize(rows);
        std::uint32_t tok = static_cast<std::uint32_t>(rng.below(a));
        for (std::size_t r = 0; r < rows; ++r) {
          const std::uint32_t nxt = draw_categorical(&cdf[tok * a], a, rng);
          b.context[r] = tok;
          b.next[r] = nxt;
          tok = nxt;
        }
      };
      fill(task.train_, spec.train_size, train_rng);
      fill(task.eval_, spec.eval_size, eval_rng);
      break;
    }
  }
  return task;
}

double Task::forward_backward(std::span<const double> params, const Batch& batch,
                              std::span<double> grads) const {
  if (params.size() != num_params() || grads.size() != num_params()) {
    throw std::invalid_argument("forward_backward: shape mismatch");
  }
  switch (spec_.kind) {
    case TaskKind::Quadratic:
      return quadratic_loss_grad(params, batch, grads.data());
    case TaskKind::MlpRegression:
      return mlp_loss_grad(MlpShape{spec_.input_dim, spec_.hidden, spec_.output_dim}, params,
                           batch, grads.data());
    case TaskKind::BigramLm:
      return bigram_loss_grad(spec_.alphabet, params, batch, grads.data());
  }
  return 0.0;
}

double Task::loss(std::span<const double> params, const Batch& batch) const {
  if (params.size() != num_params()) {
    throw std::invalid_argument("loss: shape mismatch");
  }
  switch (spec_.kind) {
    case TaskKind::Quadratic:
      return quadratic_loss_grad(params, batch, nullptr);
    case TaskKind::MlpRegression:
      return mlp_loss_grad(MlpShape{spec_.input_dim, spec_.hidden, spec_.output_dim}, params,
                           batch, nullptr);
    case TaskKind::BigramLm:
      return bigram_loss_grad(spec_.alphabet, params, batch, nullptr);
  }
  return 0.0;
}

EvalResult Task::evaluate(std::span<const double> params) const {
  EvalResult r;
  r.eval_loss = loss(params, eval_);
  r.perplexity = std::exp(r.eval_loss);
  return r;
}

Batch Task::sample_batch(RngState& state, std::size_t batch_size) const {
  if (batch_size < 1) {
    throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  }
  CounterRng rng(state);
  Batch b;
  b.rows = batch_size;
  b.input_cols = train_.input_cols;
  b.target_cols = train_.target_cols;
  for (std::size_t r = 0; r < batch_size; ++r) {
    const std::size_t i = rng.below(train_.rows);
    if (spec_.kind == TaskKind::BigramLm) {
      b.context.push_back(train_.context[i]);
      b.next.push_back(train_.next[i]);
    } else {
      b.inputs.insert(b.inputs.end(), train_.inputs.begin() + i * b.input_cols,
                      train_.inputs.begin() + (i + 1) * b.input_cols);
      b.targets.insert(b.targets.end(), train_.targets.begin() + i * b.target_cols,
                       train_.targets.begin() + (i + 1) * b.target_cols);
    }
  }
  state = rng.state();
  return b;
}

RngState batch_stream(std::uint64_t seed, std::uint64_t step) noexcept {
  return RngState{stream_key(seed, kBatchStream), step << 24};
}

}  // namespace trainguard
