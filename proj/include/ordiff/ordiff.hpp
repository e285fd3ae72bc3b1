// SPDX-License-Identifier: Apache-2.0
// Umbrella header.
#ifndef ORDIFF_ORDIFF_HPP_
#define ORDIFF_ORDIFF_HPP_

#include "ordiff/corpus.hpp"
#include "ordiff/denoiser.hpp"
#include "ordiff/diffusion.hpp"
#include "ordiff/error.hpp"
#include "ordiff/ordering.hpp"
#include "ordiff/schedule.hpp"
#include "ordiff/toy_oracle.hpp"
#include "ordiff/trainer.hpp"
#include "ordiff/util.hpp"
#include "ordiff/viz.hpp"

#endif // ORDIFF_ORDIFF_HPP_
