#pragma once

#include "deepssn/augment.hpp"
#include "deepssn/corpus_io.hpp"
#include "deepssn/error.hpp"
#include "deepssn/experiment.hpp"
#include "deepssn/geodata.hpp"
#include "deepssn/metrics.hpp"
#include "deepssn/mining.hpp"
#include "deepssn/nn/checkpoint.hpp"
#include "deepssn/nn/network.hpp"
#include "deepssn/nn/train.hpp"
#include "deepssn/qcn.hpp"
#include "deepssn/retrieval.hpp"
#include "deepssn/service.hpp"
#include "deepssn/synthetic.hpp"
