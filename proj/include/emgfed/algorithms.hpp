#pragma once

#include <string>

namespace emgfed {

enum class Algorithm {
    Local,                // subject-specific: fully minimize each streamed update
    FedAvg,               // synchronous weighted model averaging
    PerFedAvg,            // first-order MAML objective, synchronous
    SequentialPerFedAvg,  // one active user at a time, global<->local merge
    Static,               // no decoder training (closed-loop baseline)
};

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& name);

}  // namespace emgfed
