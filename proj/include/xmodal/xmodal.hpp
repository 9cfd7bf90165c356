// SPDX-License-Identifier: Apache-2.0
//
// Umbrella include.

#pragma once

#include "xmodal/builtins.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/cli.hpp"
#include "xmodal/config.hpp"
#include "xmodal/data.hpp"
#include "xmodal/decode.hpp"
#include "xmodal/decoders.hpp"
#include "xmodal/encoders.hpp"
#include "xmodal/error.hpp"
#include "xmodal/interaction.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/metrics.hpp"
#include "xmodal/nn.hpp"
#include "xmodal/parallel.hpp"
#include "xmodal/params.hpp"
#include "xmodal/pipeline.hpp"
#include "xmodal/registry.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tasks.hpp"
#include "xmodal/tensor.hpp"
#include "xmodal/training.hpp"
#include "xmodal/vocab.hpp"
#include "xmodal/xtns.hpp"
