#pragma once

#include "kmerflow/seqio/parser.hpp"
#include "kmerflow/seqio/pump.hpp"
#include "kmerflow/seqio/reader.hpp"
#include "kmerflow/seqio/record.hpp"
#include "kmerflow/seqio/writer.hpp"
