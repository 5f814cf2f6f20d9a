#pragma once

// Umbrella header for the full pipeline: autodiff CNN substrate, descriptor
// pipeline, nearest-neighbor indices, defense, attacks, and the experiment
// harness.

#include "kshield/attacks.hpp"
#include "kshield/autodiff.hpp"
#include "kshield/config.hpp"
#include "kshield/dataset.hpp"
#include "kshield/defense.hpp"
#include "kshield/eval.hpp"
#include "kshield/experiment.hpp"
#include "kshield/features.hpp"
#include "kshield/index.hpp"
#include "kshield/model.hpp"
#include "kshield/report.hpp"
#include "kshield/store.hpp"
#include "kshield/tensor.hpp"
