#pragma once

#include "hdrobust/bench.hpp"
#include "hdrobust/datagen.hpp"
#include "hdrobust/errors.hpp"
#include "hdrobust/estimators.hpp"
#include "hdrobust/geometry.hpp"
#include "hdrobust/model.hpp"
#include "hdrobust/rng.hpp"
#include "hdrobust/solvers.hpp"
