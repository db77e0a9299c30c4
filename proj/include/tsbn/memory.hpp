#pragma once

#include <map>
#include <random>
#include <vector>

#include "tsbn/data.hpp"
#include "tsbn/model.hpp"

namespace tsbn {

struct Exemplar {
    int dataset_index = -1;
    int global_class = -1;
    int task_id = -1;
};

// Budget-bounded replay store. Per-class lists keep herding order, so
// shrinking a quota is a prefix truncation.
class ExemplarMemory {
public:
    ExemplarMemory() = default;
    explicit ExemplarMemory(int budget);

    int budget() const { return budget_; }
    int size() const;
    bool empty() const { return size() == 0; }
    int class_count() const { return static_cast<int>(lists_.size()); }
    bool has_class(int global_class) const { return lists_.count(global_class) > 0; }
    const std::vector<int>& exemplars_of(int global_class) const;
    std::vector<Exemplar> all() const;  // deterministic: ascending class, herding order

    void set_class_list(int global_class, int task_id, std::vector<int> dataset_indices);
    void truncate_to(int quota);

private:
    int budget_ = 0;
    std::map<int, std::vector<int>> lists_;  // global class -> dataset indices
    std::map<int, int> task_of_class_;
};

// Greedy herding over L2-normalized feature rows: at step k pick the row
// whose inclusion brings the running exemplar mean closest to the full
// mean. Ties break toward the lowest index.
std::vector<int> herding_select(const Tensor& features, int m);

void l2_normalize_rows(Tensor& features);

enum class SelectionPolicy { Herding, Random };

// After stage A of task t: re-quota to floor(budget / classes seen),
// truncate old lists, and fill the new task's classes from herding over
// eval-mode features of the class's own sub-model.
void update_memory(ExemplarMemory& memory, IncrementalModel& model, const Dataset& train,
                   const TaskSchedule& schedule, int task, const Normalization& norm,
                   int feature_batch = 64, SelectionPolicy policy = SelectionPolicy::Herding,
                   uint64_t policy_seed = 0);

// One epoch of batches covering every exemplar exactly once, shuffled
// deterministically by the seed.
std::vector<std::vector<Exemplar>> replay_epoch(const ExemplarMemory& memory, int batch_size,
                                                uint64_t seed);

}  // namespace tsbn
