// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "steerlab/annotation.hpp"
#include "steerlab/config.hpp"
#include "steerlab/container.hpp"
#include "steerlab/csv.hpp"
#include "steerlab/dataset.hpp"
#include "steerlab/direction_file.hpp"
#include "steerlab/error.hpp"
#include "steerlab/evaluation.hpp"
#include "steerlab/parallel.hpp"
#include "steerlab/random.hpp"
#include "steerlab/selection.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/synthetic.hpp"
#include "steerlab/toy_model.hpp"
#include "steerlab/types.hpp"
