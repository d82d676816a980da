#pragma once

#include <string>
#include <utility>
#include <vector>

namespace hidiff {

// Linear DDPM variance schedule. Step indices are 1-based, matching the
// forward chain z_0 -> z_1 -> ... -> z_T. All arithmetic in double.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);

    int steps() const noexcept { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }
    // Product of alpha_1..alpha_t; alpha_bar(0) is 1.
    double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_.at(index(t)); }

    const std::vector<double>& betas() const noexcept { return beta_; }
    const std::vector<double>& alphas() const noexcept { return alpha_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

    // (sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)) for q(z_t | z_0).
    std::pair<double, double> marginal_coefficients(int t) const;

    // Plain-text table: t, beta, alpha, alpha_bar, signal, noise.
    std::string table() const;

private:
    size_t index(int t) const;

    std::vector<double> beta_, alpha_, alpha_bar_;
};

}  // namespace hidiff
