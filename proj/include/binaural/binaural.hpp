#pragma once

// Umbrella header.

#include "binaural/dataset_io.hpp"
#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"
#include "binaural/grad/check.hpp"
#include "binaural/grad/ops.hpp"
#include "binaural/grad/params.hpp"
#include "binaural/grad/suite.hpp"
#include "binaural/grad/tape.hpp"
#include "binaural/grad/tensor.hpp"
#include "binaural/metrics.hpp"
#include "binaural/net/config.hpp"
#include "binaural/net/model.hpp"
#include "binaural/scene.hpp"
#include "binaural/train/checkpoint.hpp"
#include "binaural/train/evaluate.hpp"
#include "binaural/train/loop.hpp"
#include "binaural/train/trainer.hpp"
#include "binaural/wav.hpp"
