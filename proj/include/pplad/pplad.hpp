#pragma once

#include "pplad/config.hpp"
#include "pplad/corpus.hpp"
#include "pplad/error.hpp"
#include "pplad/eval.hpp"
#include "pplad/features.hpp"
#include "pplad/instruct.hpp"
#include "pplad/io.hpp"
#include "pplad/lm.hpp"
#include "pplad/pipeline.hpp"
#include "pplad/ppl.hpp"
#include "pplad/rng.hpp"
#include "pplad/transcript.hpp"
