// Copyright 2026 The FedKEMF Simulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fedkemf/checkpoint.hpp"
#include "fedkemf/client.hpp"
#include "fedkemf/config.hpp"
#include "fedkemf/data.hpp"
#include "fedkemf/error.hpp"
#include "fedkemf/experiment.hpp"
#include "fedkemf/metrics.hpp"
#include "fedkemf/nn.hpp"
#include "fedkemf/server.hpp"
