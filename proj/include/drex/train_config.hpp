#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>

#include "drex/nn/optim.hpp"
#include "drex/nn/primitives.hpp"

namespace drex {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double max_lr = 1e-3;
  double ema_decay = 0.999;
  double huber_delta = nn::kHuberDelta;
  std::uint64_t seed = 0;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  nn::AdamWConfig adamw{};
  bool eval_with_ema = true;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: epochs and batch_size must be >= 1");
    if (!(max_lr > 0.0)) throw std::invalid_argument("TrainConfig: max_lr must be positive");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("TrainConfig: ema_decay outside [0, 1)");
    if (!(huber_delta > 0.0)) throw std::invalid_argument("TrainConfig: huber_delta must be positive");
  }

  std::size_t steps_per_epoch(std::size_t n_records) const { return (n_records + batch_size - 1) / batch_size; }

  nn::OneCycleSchedule schedule(std::size_t n_records) const {
    nn::OneCycleSchedule s;
    s.max_lr = max_lr;
    s.total_steps = epochs * steps_per_epoch(n_records);
    s.pct_start = pct_start;
    s.div_factor = div_factor;
    s.final_div_factor = final_div_factor;
    return s;
  }
};

}  // namespace drex
