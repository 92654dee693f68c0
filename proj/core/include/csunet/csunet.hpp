#pragma once

// Convenience umbrella for library consumers.

#include "csunet/common.hpp"
#include "csunet/config.hpp"
#include "csunet/conv.hpp"
#include "csunet/cst.hpp"
#include "csunet/data.hpp"
#include "csunet/gemm.hpp"
#include "csunet/gradcheck.hpp"
#include "csunet/loss.hpp"
#include "csunet/metrics.hpp"
#include "csunet/network.hpp"
#include "csunet/ops.hpp"
#include "csunet/optim.hpp"
#include "csunet/rng.hpp"
#include "csunet/serialize.hpp"
#include "csunet/tensor.hpp"
#include "csunet/train.hpp"
#include "csunet/window.hpp"
