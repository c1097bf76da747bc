#pragma once

#include "signflip/analysis.hpp"
#include "signflip/errors.hpp"
#include "signflip/family.hpp"
#include "signflip/flip_plan.hpp"
#include "signflip/glm.hpp"
#include "signflip/multitest.hpp"
#include "signflip/parallel.hpp"
#include "signflip/score.hpp"
#include "signflip/simulation.hpp"
