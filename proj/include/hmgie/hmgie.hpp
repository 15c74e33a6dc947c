#pragma once

#include "hmgie/dataset_forge.hpp"
#include "hmgie/error.hpp"
#include "hmgie/hieg.hpp"
#include "hmgie/model_gateway.hpp"
#include "hmgie/pipeline.hpp"
#include "hmgie/prompt_codec.hpp"
#include "hmgie/run_config.hpp"
#include "hmgie/scoring.hpp"
#include "hmgie/semantic_graph.hpp"
