// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pcfuse/checkpoint.hpp"
#include "pcfuse/common.hpp"
#include "pcfuse/config.hpp"
#include "pcfuse/dataset.hpp"
#include "pcfuse/decoder.hpp"
#include "pcfuse/encoder.hpp"
#include "pcfuse/fusion.hpp"
#include "pcfuse/geometry.hpp"
#include "pcfuse/gradcheck.hpp"
#include "pcfuse/io.hpp"
#include "pcfuse/layers.hpp"
#include "pcfuse/loss.hpp"
#include "pcfuse/metrics.hpp"
#include "pcfuse/model.hpp"
#include "pcfuse/rng.hpp"
#include "pcfuse/tensor.hpp"
#include "pcfuse/train.hpp"
