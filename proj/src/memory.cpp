#include "tsbn/memory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsbn {

ExemplarMemory::ExemplarMemory(int budget) : budget_(budget) {
    detail::require(budget >= 1, "memory budget must be >= 1");
}

int ExemplarMemory::size() const {
    int n = 0;
    for (const auto& [c, list] : lists_) n += static_cast<int>(list.size());
    return n;
}

const std::vector<int>& ExemplarMemory::exemplars_of(int global_class) const {
    auto it = lists_.find(global_class);
    detail::require(it != lists_.end(), "no exemplars stored for class " + std::to_string(global_class));
    return it->second;
}

std::vector<Exemplar> ExemplarMemory::all() const {
    std::vector<Exemplar> out;
    for (const auto& [c, list] : lists_) {
        for (int idx : list) out.push_back({idx, c, task_of_class_.at(c)});
    }
    return out;
}

void ExemplarMemory::set_class_list(int global_class, int task_id, std::vector<int> dataset_indices) {
    lists_[global_class] = std::move(dataset_indices);
    task_of_class_[global_class] = task_id;
}

void ExemplarMemory::truncate_to(int quota) {
    for (auto& [c, list] : lists_) {
        if (static_cast<int>(list.size()) > quota) list.resize(static_cast<size_t>(quota));
    }
}

std::vector<int> herding_select(const Tensor& features, int m) {
    detail::require(features.rank() == 2, "herding_select expects N x d features");
    const int n = features.dim(0), d = features.dim(1);
    detail::require(m >= 1 && m <= n, "herding quota " + std::to_string(m) +
                                          " outside [1," + std::to_string(n) + "]");

    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += features.at2(i, j);
    }
    for (double& v : mean) v /= n;

    std::vector<int> chosen;
    std::vector<bool> used(static_cast<size_t>(n), false);
    std::vector<double> sum(static_cast<size_t>(d), 0.0);
    for (int k = 1; k <= m; ++k) {
        int best = -1;
        double best_dist = 0.0;
        for (int i = 0; i < n; ++i) {
            if (used[static_cast<size_t>(i)]) continue;
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff =
                    mean[static_cast<size_t>(j)] - (sum[static_cast<size_t>(j)] + features.at2(i, j)) / k;
                dist += diff * diff;
            }
            if (best < 0 || dist < best_dist) {
                best = i;
                best_dist = dist;
            }
        }
        used[static_cast<size_t>(best)] = true;
        chosen.push_back(best);
        for (int j = 0; j < d; ++j) sum[static_cast<size_t>(j)] += features.at2(best, j);
    }
    return chosen;
}

void l2_normalize_rows(Tensor& features) {
    const int n = features.dim(0), d = features.dim(1);
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int j = 0; j < d; ++j) sq += static_cast<double>(features.at2(i, j)) * features.at2(i, j);
        const float inv = sq > 0.0 ? static_cast<float>(1.0 / std::sqrt(sq)) : 0.0f;
        for (int j = 0; j < d; ++j) features.at2(i, j) *= inv;
    }
}

namespace {

Tensor class_features(IncrementalModel& model, const Dataset& train, const std::vector<int>& indices,
                      int task, const Normalization& norm, int feature_batch) {
    Tensor features({static_cast<int>(indices.size()), model.backbone.feature_dim()});
    for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(feature_batch)) {
        const size_t end = std::min(indices.size(), start + static_cast<size_t>(feature_batch));
        std::vector<int> chunk(indices.begin() + static_cast<int64_t>(start),
                               indices.begin() + static_cast<int64_t>(end));
        Tensor batch = normalize_batch(train.gather(chunk), norm);
        Tensor f = forward_features(model, batch, task, BnMode::Eval);
        std::copy(f.data.begin(), f.data.end(),
                  features.data.begin() + static_cast<int64_t>(start) * model.backbone.feature_dim());
    }
    return features;
}

}  // namespace

void update_memory(ExemplarMemory& memory, IncrementalModel& model, const Dataset& train,
                   const TaskSchedule& schedule, int task, const Normalization& norm,
                   int feature_batch, SelectionPolicy policy, uint64_t policy_seed) {
    check_task_id(model, task);
    const std::vector<int> seen = schedule.classes_up_to(task);
    const int quota = memory.budget() / static_cast<int>(seen.size());
    detail::require(quota >= 1, "memory budget " + std::to_string(memory.budget()) +
                                    " below the " + std::to_string(seen.size()) +
                                    " classes seen; quota would be zero");

    memory.truncate_to(quota);

    for (int c : schedule.groups[static_cast<size_t>(task)]) {
        const std::vector<int> indices = train.indices_of_class(c);
        detail::require(!indices.empty(), "no training samples for class " + std::to_string(c));
        const int m = std::min<int>(quota, static_cast<int>(indices.size()));
        std::vector<int> picked;
        if (policy == SelectionPolicy::Herding) {
            Tensor features = class_features(model, train, indices, task, norm, feature_batch);
            l2_normalize_rows(features);
            picked = herding_select(features, m);
        } else {
            picked.resize(indices.size());
            for (size_t i = 0; i < indices.size(); ++i) picked[i] = static_cast<int>(i);
            std::mt19937 rng(static_cast<uint32_t>(mix_seed(policy_seed, static_cast<uint64_t>(c))));
            std::shuffle(picked.begin(), picked.end(), rng);
            picked.resize(static_cast<size_t>(m));
        }
        std::vector<int> selected;
        for (int row : picked) selected.push_back(indices[static_cast<size_t>(row)]);
        memory.set_class_list(c, task, std::move(selected));
    }
}

std::vector<std::vector<Exemplar>> replay_epoch(const ExemplarMemory& memory, int batch_size,
                                                uint64_t seed) {
    detail::require(batch_size >= 1, "replay batch size must be >= 1");
    std::vector<Exemplar> pool = memory.all();
    std::vector<std::vector<Exemplar>> batches;
    if (pool.empty()) return batches;
    std::mt19937 rng(static_cast<uint32_t>(mix_seed(seed, 0x4e9a)));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (size_t start = 0; start < pool.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(pool.size(), start + static_cast<size_t>(batch_size));
        batches.emplace_back(pool.begin() + static_cast<int64_t>(start),
                             pool.begin() + static_cast<int64_t>(end));
    }
    return batches;
}

}  // namespace tsbn
