#pragma once

#include "diagnostics.hpp"
#include "estimators.hpp"
#include "experiments.hpp"
#include "fem.hpp"
#include "forcing.hpp"
#include "io.hpp"
#include "mesh.hpp"
#include "model.hpp"
#include "observation.hpp"
#include "pgas.hpp"
#include "posterior.hpp"
#include "rng.hpp"
#include "smc.hpp"
#include "types.hpp"
