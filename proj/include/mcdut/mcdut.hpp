#pragma once

// Umbrella header for the unpaired image-to-image translation toolkit:
// multi-crop contrastive training, domain-consistency regularization, dual
// coordinate attention, FID/KID evaluation.

#include "mcdut/attention/dca.hpp"
#include "mcdut/cli.hpp"
#include "mcdut/config.hpp"
#include "mcdut/core/autograd.hpp"
#include "mcdut/core/nn_ops.hpp"
#include "mcdut/core/ops.hpp"
#include "mcdut/data/dataset.hpp"
#include "mcdut/eval/metrics.hpp"
#include "mcdut/image.hpp"
#include "mcdut/losses/contrastive.hpp"
#include "mcdut/nets/discriminator.hpp"
#include "mcdut/nets/generator.hpp"
#include "mcdut/nets/projections.hpp"
#include "mcdut/sampling/multicrop.hpp"
#include "mcdut/train/engine.hpp"
