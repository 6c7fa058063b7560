#pragma once

#include "rbm/band_model.hpp"
#include "rbm/distributions.hpp"
#include "rbm/errors.hpp"
#include "rbm/estimators.hpp"
#include "rbm/fluctuation.hpp"
#include "rbm/linalg.hpp"
#include "rbm/parallel.hpp"
#include "rbm/random.hpp"
#include "rbm/schenker.hpp"
#include "rbm/statistics.hpp"
