#pragma once

// Umbrella header for the attractor-guided motion prediction library.

#include "agn/common.hpp"
#include "agn/conv.hpp"
#include "agn/gradcheck.hpp"
#include "agn/layers.hpp"
#include "agn/model.hpp"
#include "agn/motion.hpp"
#include "agn/optim.hpp"
#include "agn/tensor.hpp"
#include "agn/train.hpp"
