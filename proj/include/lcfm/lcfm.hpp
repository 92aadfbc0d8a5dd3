#pragma once

// Umbrella header for the light-curve foundation-model library.

#include "lcfm/anomaly.hpp"
#include "lcfm/autodiff.hpp"
#include "lcfm/config.hpp"
#include "lcfm/dataio.hpp"
#include "lcfm/encoding.hpp"
#include "lcfm/errors.hpp"
#include "lcfm/finetune.hpp"
#include "lcfm/genlab.hpp"
#include "lcfm/gradcheck.hpp"
#include "lcfm/metrics.hpp"
#include "lcfm/model.hpp"
#include "lcfm/optim.hpp"
#include "lcfm/report.hpp"
#include "lcfm/rng.hpp"
#include "lcfm/ssl.hpp"
#include "lcfm/tensor.hpp"
#include "lcfm/vocab.hpp"
