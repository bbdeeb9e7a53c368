#pragma once

// Umbrella header.

#include "freqformer/blocks.hpp"
#include "freqformer/checkpoint.hpp"
#include "freqformer/config_file.hpp"
#include "freqformer/error.hpp"
#include "freqformer/freq_transform.hpp"
#include "freqformer/gradcheck.hpp"
#include "freqformer/image_io.hpp"
#include "freqformer/losses.hpp"
#include "freqformer/metrics.hpp"
#include "freqformer/model.hpp"
#include "freqformer/ops.hpp"
#include "freqformer/optim.hpp"
#include "freqformer/params.hpp"
#include "freqformer/rng.hpp"
#include "freqformer/robustness.hpp"
#include "freqformer/shape.hpp"
#include "freqformer/spatial_ops.hpp"
#include "freqformer/synth.hpp"
#include "freqformer/tensor.hpp"
#include "freqformer/training.hpp"
