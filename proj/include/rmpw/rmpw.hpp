#pragma once

// Umbrella header.

#include "rmpw/common.hpp"
#include "rmpw/data.hpp"
#include "rmpw/estimator.hpp"
#include "rmpw/glm.hpp"
#include "rmpw/pipeline.hpp"
#include "rmpw/propensity.hpp"
#include "rmpw/report.hpp"
#include "rmpw/simulation.hpp"
#include "rmpw/weights.hpp"
