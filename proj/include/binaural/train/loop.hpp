#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "binaural/errors.hpp"
#include "binaural/train/evaluate.hpp"
#include "binaural/train/trainer.hpp"

namespace binaural::train {

struct LoopLog {
  std::uint64_t step;
  StepResult loss;
  std::optional<EvalReport> eval;  // set every cfg.eval_every steps
};

/// Trains from scratch for cfg.steps and returns the final checkpoint.
inline Checkpoint train_loop(const std::vector<Example>& data, const ModelConfig& model, const TrainConfig& cfg,
                             const std::function<void(const LoopLog&)>& on_step = {}) {
  if (data.empty()) throw UsageError("train_loop: empty dataset");
  Trainer trainer(model, cfg, data.size());
  trainer.run(data, cfg.steps, [&](const StepLog& log) {
    LoopLog out{log.step, log.loss, std::nullopt};
    if (cfg.eval_every > 0 && log.step % cfg.eval_every == 0) out.eval = evaluate_dataset(data, trainer.net());
    if (on_step) on_step(out);
  });
  return trainer.checkpoint();
}

}  // namespace binaural::train
