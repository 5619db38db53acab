#pragma once

#include "mpqg/adam.hpp"
#include "mpqg/checkpoint.hpp"
#include "mpqg/commands.hpp"
#include "mpqg/config.hpp"
#include "mpqg/data.hpp"
#include "mpqg/decoder.hpp"
#include "mpqg/encoder.hpp"
#include "mpqg/errors.hpp"
#include "mpqg/grad_check.hpp"
#include "mpqg/kernels.hpp"
#include "mpqg/metrics.hpp"
#include "mpqg/model.hpp"
#include "mpqg/rl.hpp"
#include "mpqg/rng.hpp"
#include "mpqg/tape.hpp"
#include "mpqg/tensor.hpp"
#include "mpqg/text.hpp"
#include "mpqg/training.hpp"
