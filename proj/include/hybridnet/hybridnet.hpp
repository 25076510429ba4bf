// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_HYBRIDNET_HPP
#define HYBRIDNET_HYBRIDNET_HPP

#include "hybridnet/arch_config.hpp"
#include "hybridnet/arch_model.hpp"
#include "hybridnet/cost_model.hpp"
#include "hybridnet/datasets.hpp"
#include "hybridnet/kernels.hpp"
#include "hybridnet/quantize.hpp"
#include "hybridnet/report.hpp"
#include "hybridnet/tensor.hpp"
#include "hybridnet/trainer.hpp"
#include "hybridnet/verify.hpp"

#endif
