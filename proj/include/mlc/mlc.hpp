#pragma once

// Umbrella header for the whole library.

#include "mlc/config.hpp"
#include "mlc/data.hpp"
#include "mlc/decoder.hpp"
#include "mlc/encoder.hpp"
#include "mlc/error.hpp"
#include "mlc/gradcheck.hpp"
#include "mlc/image.hpp"
#include "mlc/loss.hpp"
#include "mlc/metrics.hpp"
#include "mlc/model.hpp"
#include "mlc/ops.hpp"
#include "mlc/optim.hpp"
#include "mlc/report.hpp"
#include "mlc/rng.hpp"
#include "mlc/serialize.hpp"
#include "mlc/tensor.hpp"
#include "mlc/train.hpp"
