#pragma once

#include "drex/analysis.hpp"
#include "drex/checkpoint.hpp"
#include "drex/config_json.hpp"
#include "drex/feature_store.hpp"
#include "drex/metrics.hpp"
#include "drex/model.hpp"
#include "drex/nn/ops.hpp"
#include "drex/nn/optim.hpp"
#include "drex/nn/primitives.hpp"
#include "drex/nn/tape.hpp"
#include "drex/parallel.hpp"
#include "drex/rng.hpp"
#include "drex/synthetic.hpp"
#include "drex/trainer.hpp"
