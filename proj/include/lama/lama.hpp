#pragma once

#include "lama/config.hpp"
#include "lama/core.hpp"
#include "lama/io.hpp"
#include "lama/metrics.hpp"
#include "lama/objective.hpp"
#include "lama/regularizer.hpp"
#include "lama/simdata.hpp"
#include "lama/solver.hpp"
#include "lama/tomo.hpp"
