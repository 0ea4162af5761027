#pragma once

// Umbrella header for the embedding reliability toolkit.

#include "embcert/error.hpp"
#include "embcert/types.hpp"
#include "embcert/parallel.hpp"
#include "embcert/random.hpp"
#include "embcert/kmeanspp.hpp"
#include "embcert/gmm.hpp"
#include "embcert/neighbors.hpp"
#include "embcert/scorers.hpp"
#include "embcert/eval.hpp"
#include "embcert/sweep.hpp"
#include "embcert/synth.hpp"
#include "embcert/io.hpp"
