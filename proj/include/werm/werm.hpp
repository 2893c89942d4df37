#pragma once

#include "werm/errors.hpp"
#include "werm/rng.hpp"
#include "werm/core.hpp"
#include "werm/losses.hpp"
#include "werm/weights.hpp"
#include "werm/solver.hpp"
#include "werm/segmentation.hpp"
#include "werm/state_evolution.hpp"
#include "werm/inference.hpp"
#include "werm/harness.hpp"
#include "werm/io.hpp"
