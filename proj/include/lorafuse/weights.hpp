#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lorafuse/embed.hpp"
#include "lorafuse/index.hpp"

namespace lorafuse::weights {

struct TaskMass {
    std::string task;
    double mass = 0.0;
};

struct TaskWeight {
    std::string task;
    double weight = 0.0;

    friend bool operator==(const TaskWeight&, const TaskWeight&) = default;
};

/// Post-nucleus fusion weights. Entries are ordered by descending weight
/// (ties by task name); tasks outside the nucleus are absent and weigh zero.
struct TaskWeightDistribution {
    std::vector<TaskWeight> entries;
    double p_used = 1.0;

    std::vector<std::string> nucleus_tasks() const;
    double weight(std::string_view task) const;
    double total() const;
    bool contains(std::string_view task) const;

    friend bool operator==(const TaskWeightDistribution&, const TaskWeightDistribution&) = default;
};

/// exp(-d). Throws NegativeDistance for d < 0 or NaN.
double kernel(double distance);

/// One mass per distinct task (sorted by name), p_t = S_t / sum_u S_u. Per-task
/// sums add similarities in ascending order so the result does not depend on
/// input order. Throws EmptyNeighbourList.
std::vector<TaskMass> aggregate_similarities(std::span<const std::pair<std::string, double>> similarities);
std::vector<TaskMass> aggregate(std::span<const index::Neighbour> neighbours);

/// Smallest descending-mass prefix whose cumulative mass reaches p (the
/// crossing task included), renormalized inside the prefix. p = 1 keeps every
/// task with positive mass. Throws InvalidP or UnnormalizedInput.
TaskWeightDistribution nucleus(std::span<const TaskMass> masses, double p);

/// query -> kernel -> aggregate -> nucleus.
TaskWeightDistribution task_weights(const embed::EmbeddingVector& q, const index::VectorIndex& index,
                                    std::size_t k = 100, double p = 0.9);

/// {"weights": {task: w, ...}, "p": p, "k": k}, tasks in descending weight.
std::string to_json(const TaskWeightDistribution& dist, std::size_t k);

/// Reads a weights file. Values must be finite and non-negative; zero weights
/// are dropped. The result is not renormalized. Throws FormatError.
TaskWeightDistribution parse_json(std::string_view text);

/// Rescales so the weights sum to exactly 1 in double precision. Throws
/// UnnormalizedInput when the total is non-positive.
TaskWeightDistribution renormalized(TaskWeightDistribution dist);

}  // namespace lorafuse::weights
