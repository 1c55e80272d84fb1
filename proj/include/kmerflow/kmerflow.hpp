#pragma once

#include "kmerflow/error.hpp"
#include "kmerflow/filters.hpp"
#include "kmerflow/kmer.hpp"
#include "kmerflow/metrics.hpp"
#include "kmerflow/persist.hpp"
#include "kmerflow/pipeline.hpp"
#include "kmerflow/seqio.hpp"
#include "kmerflow/sketch.hpp"
