// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hsgat/checkpoint.hpp"
#include "hsgat/config.hpp"
#include "hsgat/dataset_io.hpp"
#include "hsgat/error.hpp"
#include "hsgat/format.hpp"
#include "hsgat/experiments.hpp"
#include "hsgat/gat.hpp"
#include "hsgat/grad_check.hpp"
#include "hsgat/graph.hpp"
#include "hsgat/objective.hpp"
#include "hsgat/seed.hpp"
#include "hsgat/tensor.hpp"
#include "hsgat/training.hpp"
