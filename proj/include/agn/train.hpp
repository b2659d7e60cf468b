#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>

#include "agn/motion.hpp"
#include "agn/optim.hpp"

namespace agn {

struct TrainOptions {
  std::int64_t epochs = 50;
  std::int64_t batch_size = 16;
  double base_lr = kInitialLearningRate;
  std::uint64_t seed = 1;
  std::string checkpoint_dir;  // write checkpoint_epoch_NNN.agnc when set
  std::string loss_csv_path;   // write the loss history when set
};

struct LossRecord {
  std::int64_t epoch = 0;
  std::int64_t iteration = 0;  // global, monotonically increasing
  double loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<LossRecord> history;
  bool diverged = false;

  double initial_loss() const { return history.empty() ? 0.0 : history.front().loss; }
  double final_loss() const { return history.empty() ? 0.0 : history.back().loss; }
};

inline void write_loss_csv(const std::vector<LossRecord>& history, const std::string& path) {
  std::string buf = "epoch,iteration,loss,lr\n";
  char tmp[128];
  for (const auto& r : history) {
    std::snprintf(tmp, sizeof tmp, "%lld,%lld,%.9g,%.9g\n", static_cast<long long>(r.epoch),
                  static_cast<long long>(r.iteration), r.loss, r.lr);
    buf += tmp;
  }
  detail::write_file(path, buf, "loss csv");
}

// Seeded mini-batch training with the decayed-Adam schedule. One epoch is a
// full pass over the window list; the loss is the batch-mean MPJPE.
template <typename S>
TrainResult train(ModelT<S>& model, const std::vector<WindowPair<S>>& dataset,
                  const TrainOptions& options) {
  if (dataset.empty()) throw InputError("training dataset is empty");
  if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (options.epochs < 1) throw ConfigError("epochs must be >= 1");

  TrainResult result;
  AdamState<S> state(model.params);
  Rng rng(options.seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::int64_t iteration = 0;
  for (std::int64_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, options.base_lr);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t pos = 0; pos < order.size(); pos += options.batch_size) {
      const std::size_t batch_end = std::min(order.size(), pos + options.batch_size);
      TensorT<S> loss;
      for (std::size_t b = pos; b < batch_end; ++b) {
        const auto& w = dataset[order[b]];
        auto sample_loss = mpjpe_loss(model.forward(w.input), w.target);
        loss = loss.defined() ? add(loss, sample_loss) : sample_loss;
      }
      loss = scale(loss, S(1) / S(batch_end - pos));
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value) && !result.diverged) {
        result.diverged = true;
        std::fprintf(stderr, "warning: training loss diverged at iteration %lld\n",
                     static_cast<long long>(iteration));
      }
      backward(loss);
      adam_step(model.params, state, lr);
      result.history.push_back({epoch, iteration, loss_value, lr});
      ++iteration;
    }
    if (!options.checkpoint_dir.empty()) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%03lld.agnc",
                    static_cast<long long>(epoch));
      save_checkpoint(model.params,
                      (std::filesystem::path(options.checkpoint_dir) / name).string());
    }
  }
  if (!options.loss_csv_path.empty()) write_loss_csv(result.history, options.loss_csv_path);
  return result;
}

// ---- evaluation ----

struct EvalReport {
  std::vector<std::int64_t> horizons;   // frame offsets, ascending
  std::vector<double> model_mpjpe;      // mm, per horizon
  std::vector<double> baseline_mpjpe;   // zero-velocity baseline, per horizon
  std::int64_t sample_count = 0;
};

// Repeat the last observed frame for every future frame.
template <typename S>
TensorT<S> zero_velocity_prediction(const TensorT<S>& input, std::int64_t t_out) {
  const std::int64_t T = input.shape()[1];
  auto last = slice(input, 1, T - 1, 1);  // [N x 1 x 3]
  std::vector<TensorT<S>> frames(t_out, last);
  return concat(frames, 1);
}

namespace detail {

// Mean over joints of Euclidean distance at one frame offset (1-based).
template <typename S>
double frame_mpjpe(const TensorT<S>& pred, const TensorT<S>& truth, std::int64_t horizon) {
  const std::int64_t N = pred.shape()[0];
  double acc = 0;
  for (std::int64_t j = 0; j < N; ++j) {
    double s = 0;
    for (std::int64_t d = 0; d < 3; ++d) {
      const double diff = static_cast<double>(pred.at({j, horizon - 1, d})) -
                          static_cast<double>(truth.at({j, horizon - 1, d}));
      s += diff * diff;
    }
    acc += std::sqrt(s);
  }
  return acc / static_cast<double>(N);
}

// Sample order must not matter, so sum the per-sample values in sorted order.
inline double order_free_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double acc = 0;
  for (double v : values) acc += v;
  return values.empty() ? 0.0 : acc / static_cast<double>(values.size());
}

}  // namespace detail

// Per-horizon MPJPE of an arbitrary predictor against the zero-velocity
// baseline, averaged over the dataset.
template <typename S>
EvalReport evaluate(const std::function<TensorT<S>(const TensorT<S>&)>& predictor,
                    const std::vector<WindowPair<S>>& dataset,
                    std::vector<std::int64_t> horizons) {
  if (dataset.empty()) throw InputError("evaluation dataset is empty");
  if (horizons.empty()) throw ConfigError("at least one horizon required");
  std::sort(horizons.begin(), horizons.end());
  const std::int64_t t_out = dataset[0].target.shape()[1];
  for (auto h : horizons) {
    if (h < 1 || h > t_out) {
      throw ConfigError("horizon " + std::to_string(h) + " out of range [1, " +
                        std::to_string(t_out) + "]");
    }
  }
  EvalReport report;
  report.horizons = horizons;
  report.sample_count = static_cast<std::int64_t>(dataset.size());
  std::vector<std::vector<double>> model_vals(horizons.size());
  std::vector<std::vector<double>> base_vals(horizons.size());
  for (const auto& w : dataset) {
    auto pred = predictor(w.input);
    if (pred.shape() != w.target.shape()) {
      throw ContractError("predictor output " + shape_str(pred.shape()) +
                          " does not match target " + shape_str(w.target.shape()));
    }
    auto base = zero_velocity_prediction(w.input, t_out);
    for (std::size_t i = 0; i < horizons.size(); ++i) {
      model_vals[i].push_back(detail::frame_mpjpe(pred, w.target, horizons[i]));
      base_vals[i].push_back(detail::frame_mpjpe(base, w.target, horizons[i]));
    }
  }
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    report.model_mpjpe.push_back(detail::order_free_mean(std::move(model_vals[i])));
    report.baseline_mpjpe.push_back(detail::order_free_mean(std::move(base_vals[i])));
  }
  return report;
}

template <typename S>
EvalReport evaluate(const ModelT<S>& model, const std::vector<WindowPair<S>>& dataset,
                    std::vector<std::int64_t> horizons) {
  return evaluate<S>([&model](const TensorT<S>& x) { return model.forward(x); }, dataset,
                     std::move(horizons));
}

}  // namespace agn
