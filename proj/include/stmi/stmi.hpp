#pragma once

// Umbrella header.

#include "stmi/baselines.hpp"
#include "stmi/config.hpp"
#include "stmi/core.hpp"
#include "stmi/geometry.hpp"
#include "stmi/losses.hpp"
#include "stmi/motion.hpp"
#include "stmi/networks.hpp"
#include "stmi/params.hpp"
#include "stmi/spectral.hpp"
#include "stmi/tensor.hpp"
#include "stmi/training.hpp"
