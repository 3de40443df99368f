#pragma once

#include "sntf/errors.hpp"
#include "sntf/eval.hpp"
#include "sntf/hdp_prior.hpp"
#include "sntf/model_io.hpp"
#include "sntf/random.hpp"
#include "sntf/rff_gp.hpp"
#include "sntf/stp_sampler.hpp"
#include "sntf/svi_trainer.hpp"
#include "sntf/tensor.hpp"
