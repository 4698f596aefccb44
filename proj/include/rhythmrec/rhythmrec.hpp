#pragma once

#include "rhythmrec/adam.hpp"
#include "rhythmrec/checkpoint.hpp"
#include "rhythmrec/config.hpp"
#include "rhythmrec/dataset.hpp"
#include "rhythmrec/embeddings.hpp"
#include "rhythmrec/evaluator.hpp"
#include "rhythmrec/gradcheck.hpp"
#include "rhythmrec/model.hpp"
#include "rhythmrec/ops.hpp"
#include "rhythmrec/rng.hpp"
#include "rhythmrec/selfcheck.hpp"
#include "rhythmrec/synth.hpp"
#include "rhythmrec/tensor.hpp"
#include "rhythmrec/trainer.hpp"
