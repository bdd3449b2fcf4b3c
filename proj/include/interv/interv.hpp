#pragma once

#include "interv/io.hpp"
#include "interv/corpus.hpp"
#include "interv/items.hpp"
#include "interv/aho_corasick.hpp"
#include "interv/matcher.hpp"
#include "interv/bm25.hpp"
#include "interv/selector.hpp"
#include "interv/planner.hpp"
#include "interv/evaluator.hpp"
#include "interv/toylab.hpp"
#include "interv/pipeline.hpp"
