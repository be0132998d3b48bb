// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.
#pragma once

#include "semhtr/checkpoint.hpp"
#include "semhtr/config.hpp"
#include "semhtr/dataset.hpp"
#include "semhtr/embedding.hpp"
#include "semhtr/evaluation.hpp"
#include "semhtr/inference.hpp"
#include "semhtr/metrics.hpp"
#include "semhtr/model.hpp"
#include "semhtr/synth.hpp"
#include "semhtr/training.hpp"
