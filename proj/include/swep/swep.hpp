#pragma once

#include "swep/analysis/analysis.hpp"
#include "swep/cli/run_config.hpp"
#include "swep/common.hpp"
#include "swep/core/rng.hpp"
#include "swep/core/tape.hpp"
#include "swep/data/example.hpp"
#include "swep/data/squad.hpp"
#include "swep/data/tokenizer.hpp"
#include "swep/data/toy.hpp"
#include "swep/data/vocab.hpp"
#include "swep/data/vocab_io.hpp"
#include "swep/model/checkpoint.hpp"
#include "swep/model/config.hpp"
#include "swep/model/qa_model.hpp"
#include "swep/noise/baselines.hpp"
#include "swep/noise/generator.hpp"
#include "swep/noise/objectives.hpp"
#include "swep/train/metrics.hpp"
#include "swep/train/optimizer.hpp"
#include "swep/train/trainer.hpp"
