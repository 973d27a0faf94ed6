#pragma once

#include "impatient/batch_oracle.hpp"
#include "impatient/config.hpp"
#include "impatient/contextual.hpp"
#include "impatient/csv.hpp"
#include "impatient/environments.hpp"
#include "impatient/gaussian.hpp"
#include "impatient/harness.hpp"
#include "impatient/metrics.hpp"
#include "impatient/policies.hpp"
#include "impatient/prior_fit.hpp"
#include "impatient/rng.hpp"
#include "impatient/types.hpp"
