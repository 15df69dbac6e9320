// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "srm/core/error.hpp"
#include "srm/core/random.hpp"
#include "srm/harness/best_of_n.hpp"
#include "srm/harness/commands.hpp"
#include "srm/harness/config.hpp"
#include "srm/harness/experiment.hpp"
#include "srm/harness/preferences.hpp"
#include "srm/harness/report.hpp"
#include "srm/harness/synthetic.hpp"
#include "srm/harness/training.hpp"
#include "srm/model/config.hpp"
#include "srm/model/language_model.hpp"
#include "srm/model/rope.hpp"
#include "srm/model/transformer.hpp"
#include "srm/nn/adam.hpp"
#include "srm/nn/checkpoint.hpp"
#include "srm/nn/gradcheck.hpp"
#include "srm/nn/graph.hpp"
#include "srm/nn/parameters.hpp"
#include "srm/nn/tensor.hpp"
#include "srm/reward/aggregation.hpp"
#include "srm/reward/inputs.hpp"
#include "srm/reward/model.hpp"
#include "srm/rl/advantage.hpp"
#include "srm/rl/ppo.hpp"
#include "srm/rl/trainer.hpp"
#include "srm/text/alignment.hpp"
#include "srm/text/segmenter.hpp"
#include "srm/text/tokenizer.hpp"
