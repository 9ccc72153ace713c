#pragma once

#include "lotr/autodiff.hpp"
#include "lotr/container.hpp"
#include "lotr/data.hpp"
#include "lotr/gradcheck.hpp"
#include "lotr/heatmap.hpp"
#include "lotr/landmarks.hpp"
#include "lotr/losses.hpp"
#include "lotr/metrics.hpp"
#include "lotr/model.hpp"
#include "lotr/nn.hpp"
#include "lotr/ops.hpp"
#include "lotr/rng.hpp"
#include "lotr/tensor.hpp"
#include "lotr/training.hpp"
