// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#pragma once

#include "ablation.hpp"
#include "aggregation.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "core.hpp"
#include "dataset.hpp"
#include "image_io.hpp"
#include "layers.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "neighbor_sampler.hpp"
#include "network.hpp"
#include "optimizer.hpp"
#include "points.hpp"
#include "postprocess.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
#include "visualize.hpp"
