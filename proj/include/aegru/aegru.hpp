#pragma once

// Umbrella header for the AEGRU neural motor decoder toolkit.

#include "aegru/checkpoint.hpp"
#include "aegru/data.hpp"
#include "aegru/errors.hpp"
#include "aegru/matrix.hpp"
#include "aegru/metrics.hpp"
#include "aegru/model.hpp"
#include "aegru/preprocess.hpp"
#include "aegru/rng.hpp"
#include "aegru/sparsify.hpp"
#include "aegru/tape.hpp"
#include "aegru/training.hpp"
