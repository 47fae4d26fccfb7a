#ifndef GFCA_GFCA_HPP
#define GFCA_GFCA_HPP

// Everything except the command-line layer.
#include "gfca/adapt_net.hpp"
#include "gfca/autograd.hpp"
#include "gfca/checkpoint.hpp"
#include "gfca/config.hpp"
#include "gfca/dataset.hpp"
#include "gfca/dataset_io.hpp"
#include "gfca/error.hpp"
#include "gfca/eval.hpp"
#include "gfca/feature_gan.hpp"
#include "gfca/gradcheck.hpp"
#include "gfca/mkmmd.hpp"
#include "gfca/numerics.hpp"
#include "gfca/rng.hpp"
#include "gfca/trainer.hpp"

#endif  // GFCA_GFCA_HPP
