#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace knowexpert {

// Probability vector over the knowledge experts.
struct TopicWeights {
    std::vector<double> w;

    TopicWeights() = default;
    explicit TopicWeights(std::vector<double> v) : w(std::move(v)) {}

    int size() const { return static_cast<int>(w.size()); }

    void validate() const {
        if (w.empty()) throw std::invalid_argument("TopicWeights: empty");
        double sum = 0.0;
        for (double x : w) {
            if (!(x >= 0.0)) throw std::invalid_argument("TopicWeights: negative entry");
            sum += x;
        }
        if (std::fabs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("TopicWeights: not on the simplex");
    }

    static TopicWeights uniform(int n) {
        return TopicWeights(std::vector<double>(static_cast<size_t>(n), 1.0 / n));
    }

    static TopicWeights one_hot(int n, int index) {
        std::vector<double> v(static_cast<size_t>(n), 0.0);
        v.at(static_cast<size_t>(index)) = 1.0;
        return TopicWeights(std::move(v));
    }
};

// Argmax index, ties resolved toward the lowest index.
inline int assign_cluster(const TopicWeights& tw) {
    tw.validate();
    int best = 0;
    for (int i = 1; i < tw.size(); ++i)
        if (tw.w[static_cast<size_t>(i)] > tw.w[static_cast<size_t>(best)]) best = i;
    return best;
}

}  // namespace knowexpert
