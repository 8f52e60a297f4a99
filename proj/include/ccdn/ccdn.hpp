#pragma once

#include "ccdn/backbone.hpp"
#include "ccdn/checkpoint.hpp"
#include "ccdn/cocs.hpp"
#include "ccdn/config.hpp"
#include "ccdn/ctm.hpp"
#include "ccdn/data.hpp"
#include "ccdn/eval.hpp"
#include "ccdn/experiment.hpp"
#include "ccdn/gradcheck.hpp"
#include "ccdn/gradsuite.hpp"
#include "ccdn/linalg.hpp"
#include "ccdn/nn_ops.hpp"
#include "ccdn/ops.hpp"
#include "ccdn/parallel.hpp"
#include "ccdn/rng.hpp"
#include "ccdn/tape.hpp"
#include "ccdn/tensor.hpp"
#include "ccdn/train.hpp"
