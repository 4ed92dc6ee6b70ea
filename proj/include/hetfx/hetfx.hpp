#pragma once
// Umbrella header.

#include "core.hpp"
#include "random.hpp"
#include "parallel.hpp"
#include "linalg.hpp"
#include "data.hpp"
#include "io.hpp"
#include "propensity.hpp"
#include "solvers.hpp"
#include "effects.hpp"
#include "pipeline.hpp"
#include "inference.hpp"
#include "policy.hpp"
#include "reporting.hpp"
#include "synth.hpp"
