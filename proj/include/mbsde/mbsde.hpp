#pragma once

// Everything, including the run layer (link OpenSSL::Crypto, or use the mbsde_run target).

#include "mbsde/geometry.hpp"
#include "mbsde/convexity.hpp"
#include "mbsde/forward.hpp"
#include "mbsde/drift.hpp"
#include "mbsde/pdesolver.hpp"
#include "mbsde/bsde.hpp"
#include "mbsde/verify.hpp"
#include "mbsde/dirichlet.hpp"
#include "mbsde/experiment.hpp"
#include "mbsde/run.hpp"
