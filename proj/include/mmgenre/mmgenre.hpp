// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mmgenre/error.hpp"
#include "mmgenre/rng.hpp"
#include "mmgenre/tensor.hpp"
#include "mmgenre/kernels.hpp"
#include "mmgenre/autograd.hpp"
#include "mmgenre/ops.hpp"
#include "mmgenre/grad_check.hpp"
#include "mmgenre/nn/parameters.hpp"
#include "mmgenre/nn/optim.hpp"
#include "mmgenre/nn/layers.hpp"
#include "mmgenre/model/config.hpp"
#include "mmgenre/model/fusion.hpp"
#include "mmgenre/data/record.hpp"
#include "mmgenre/data/batch.hpp"
#include "mmgenre/data/mmf.hpp"
#include "mmgenre/data/npy.hpp"
#include "mmgenre/data/dataset.hpp"
#include "mmgenre/data/synth.hpp"
#include "mmgenre/metrics.hpp"
#include "mmgenre/train/loss.hpp"
#include "mmgenre/train/checkpoint.hpp"
#include "mmgenre/train/trainer.hpp"
#include "mmgenre/train/experiments.hpp"
