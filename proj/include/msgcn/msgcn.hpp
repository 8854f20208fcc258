#pragma once

#include "msgcn/error.hpp"
#include "msgcn/features.hpp"
#include "msgcn/graph.hpp"
#include "msgcn/interpret.hpp"
#include "msgcn/manifest.hpp"
#include "msgcn/metrics.hpp"
#include "msgcn/model.hpp"
#include "msgcn/params.hpp"
#include "msgcn/rng.hpp"
#include "msgcn/tape.hpp"
#include "msgcn/tensor.hpp"
#include "msgcn/train.hpp"
