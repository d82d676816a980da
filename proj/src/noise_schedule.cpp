#include "hidiff/noise_schedule.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace hidiff {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0)) {
        throw std::invalid_argument("noise schedule variances must lie in (0, 1)");
    }
    if (beta_start > beta_end) throw std::invalid_argument("noise schedule requires beta_start <= beta_end");

    NoiseSchedule s;
    s.beta_.resize(steps);
    if (steps == 1) {
        // single step starts from near-pure noise
        s.beta_[0] = beta_end;
    } else {
        const double delta = (beta_end - beta_start) / double(steps - 1);
        for (int i = 0; i < steps; ++i) s.beta_[i] = beta_start + double(i) * delta;
        s.beta_.back() = beta_end;
    }
    s.alpha_.resize(steps);
    s.alpha_bar_.resize(steps);
    double running = 1.0;
    for (int i = 0; i < steps; ++i) {
        s.alpha_[i] = 1.0 - s.beta_[i];
        running *= s.alpha_[i];
        s.alpha_bar_[i] = running;
    }
    return s;
}

size_t NoiseSchedule::index(int t) const {
    if (t < 1 || t > steps()) {
        throw std::out_of_range("step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
    }
    return static_cast<size_t>(t - 1);
}

std::pair<double, double> NoiseSchedule::marginal_coefficients(int t) const {
    const double ab = alpha_bar_.at(index(t));
    return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

std::string NoiseSchedule::table() const {
    std::ostringstream os;
    os << "t,beta,alpha,alpha_bar,signal_scale,noise_scale\n";
    char line[160];
    for (int t = 1; t <= steps(); ++t) {
        auto [sig, noi] = marginal_coefficients(t);
        std::snprintf(line, sizeof line, "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", t, beta(t), alpha(t), alpha_bar(t),
                      sig, noi);
        os << line;
    }
    return os.str();
}

}  // namespace hidiff
