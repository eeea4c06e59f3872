#pragma once

// Umbrella header.

#include "fgromov/errors.hpp"
#include "fgromov/group.hpp"
#include "fgromov/subgroup.hpp"
#include "fgromov/harmonic.hpp"
#include "fgromov/kleiner.hpp"
#include "fgromov/approx_rep.hpp"
#include "fgromov/milnor_wolf.hpp"
#include "fgromov/pipeline.hpp"
