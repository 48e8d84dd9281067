#pragma once

// Umbrella header: sequence-to-sequence appliance load disaggregation.
//
//   tensor.hpp       reverse-mode autodiff over dense tensors
//   layers.hpp       dilated conv / dense / layer norm / dropout
//   model.hpp        multi-scale residual network and baseline stack
//   series.hpp       CSV ingestion and 6 s grid resampling
//   activations.hpp  appliance activation extraction
//   sampling.hpp     window sampling, normalization, training filter
//   synth.hpp        synthetic household generator
//   shards.hpp       binary sample exchange format
//   checkpoint.hpp   model serialization
//   training.hpp     losses, optimizers, training loop
//   eval.hpp         metrics and reports
//   manifest.hpp     experiment manifest (all domain constants as data)
//   pipeline.hpp     synth/prepare/train/evaluate orchestration

#include "nilm/errors.hpp"
#include "nilm/rng.hpp"
#include "nilm/parallel.hpp"
#include "nilm/tensor.hpp"
#include "nilm/layers.hpp"
#include "nilm/model.hpp"
#include "nilm/checkpoint.hpp"
#include "nilm/series.hpp"
#include "nilm/activations.hpp"
#include "nilm/sampling.hpp"
#include "nilm/synth.hpp"
#include "nilm/shards.hpp"
#include "nilm/training.hpp"
#include "nilm/eval.hpp"
#include "nilm/manifest.hpp"
#include "nilm/pipeline.hpp"
