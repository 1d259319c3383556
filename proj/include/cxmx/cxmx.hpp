#pragma once

#include "cxmx/common.hpp"
#include "cxmx/config.hpp"
#include "cxmx/evaluation.hpp"
#include "cxmx/experiment.hpp"
#include "cxmx/io.hpp"
#include "cxmx/metrics.hpp"
#include "cxmx/model.hpp"
#include "cxmx/probe.hpp"
#include "cxmx/sequence.hpp"
#include "cxmx/synthetic.hpp"
#include "cxmx/training.hpp"
#include "cxmx/trend.hpp"
#include "cxmx/vocab.hpp"
#include "cxmx/vq.hpp"
