#pragma once

// Umbrella header pulling in the whole library.

#include "iofsmpc/config.hpp"
#include "iofsmpc/controllers.hpp"
#include "iofsmpc/core.hpp"
#include "iofsmpc/estimation.hpp"
#include "iofsmpc/invariance.hpp"
#include "iofsmpc/model.hpp"
#include "iofsmpc/pipeline.hpp"
#include "iofsmpc/presets.hpp"
#include "iofsmpc/qp.hpp"
#include "iofsmpc/simlab.hpp"
#include "iofsmpc/synthesis.hpp"
#include "iofsmpc/uncertainty.hpp"
