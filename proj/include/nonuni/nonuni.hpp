#pragma once

#include "arith.hpp"
#include "graph_models.hpp"
#include "mass_transport.hpp"
#include "return_series.hpp"
#include "doob_level_walk.hpp"
#include "quasi_transitive.hpp"
#include "conditioned_paths.hpp"
