#pragma once

#include "trot/adapt.hpp"
#include "trot/csv.hpp"
#include "trot/dataset.hpp"
#include "trot/error.hpp"
#include "trot/eval.hpp"
#include "trot/hmm.hpp"
#include "trot/json_io.hpp"
#include "trot/ot.hpp"
#include "trot/preprocess.hpp"
#include "trot/synth.hpp"
