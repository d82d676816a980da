#pragma once

#include "hidiff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace hidiff {

struct Init {
    enum class Kind { zeros, constant, fan_in_uniform, normal };
    Kind kind = Kind::fan_in_uniform;
    double value = 0.0;  // constant value or normal stddev

    static Init zeros() { return {Kind::zeros, 0.0}; }
    static Init ones() { return {Kind::constant, 1.0}; }
    static Init constant(double v) { return {Kind::constant, v}; }
    // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = size / shape[0]
    static Init fan_in() { return {Kind::fan_in_uniform, 0.0}; }
    static Init normal(double stddev) { return {Kind::normal, stddev}; }
};

template <std::floating_point T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

// Owns every learnable tensor of a model, keyed by dotted name. Insertion
// order is creation order, which keeps initialization reproducible.
template <std::floating_point T>
class ParamStore {
public:
    explicit ParamStore(uint64_t seed = 0) : rng_(seed) {}
    ParamStore(const ParamStore&) = delete;
    ParamStore& operator=(const ParamStore&) = delete;

    Var<T> create(const std::string& name, Shape shape, Init init);

    const std::vector<NamedParam<T>>& params() const noexcept { return params_; }
    std::vector<NamedParam<T>>& params() noexcept { return params_; }
    const Var<T>* find(const std::string& name) const;
    Var<T>* find(const std::string& name);

    // Number of scalars in parameters whose name starts with prefix.
    size_t count(const std::string& prefix = "") const;
    void set_trainable(const std::string& prefix, bool on);
    void zero_grad();
    std::vector<Var<T>> trainable() const;

private:
    std::mt19937_64 rng_;
    std::vector<NamedParam<T>> params_;
    std::map<std::string, size_t> index_;
};

template <std::floating_point T>
class ParamScope {
public:
    ParamScope(ParamStore<T>& store, std::string prefix) : store_(&store), prefix_(std::move(prefix)) {}

    ParamScope sub(const std::string& name) const { return {*store_, join(name)}; }
    Var<T> param(const std::string& name, Shape shape, Init init = Init::fan_in()) const {
        return store_->create(join(name), std::move(shape), init);
    }
    const std::string& prefix() const noexcept { return prefix_; }

private:
    std::string join(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

    ParamStore<T>* store_;
    std::string prefix_;
};

template <std::floating_point T>
Var<T> ParamStore<T>::create(const std::string& name, Shape shape, Init init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    Tensor<T> value(shape);
    switch (init.kind) {
        case Init::Kind::zeros:
            break;
        case Init::Kind::constant:
            value.fill(static_cast<T>(init.value));
            break;
        case Init::Kind::fan_in_uniform: {
            const double fan_in = shape.empty() ? 1.0 : double(value.size()) / double(shape[0]);
            const double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : value.values()) v = static_cast<T>(dist(rng_));
            break;
        }
        case Init::Kind::normal: {
            std::normal_distribution<double> dist(0.0, init.value);
            for (auto& v : value.values()) v = static_cast<T>(dist(rng_));
            break;
        }
    }
    Var<T> var(std::move(value), true);
    index_[name] = params_.size();
    params_.push_back({name, var});
    return var;
}

template <std::floating_point T>
const Var<T>* ParamStore<T>::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second].var;
}

template <std::floating_point T>
Var<T>* ParamStore<T>::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second].var;
}

template <std::floating_point T>
size_t ParamStore<T>::count(const std::string& prefix) const {
    size_t n = 0;
    for (const auto& p : params_)
        if (p.name.rfind(prefix, 0) == 0) n += p.var.value().size();
    return n;
}

template <std::floating_point T>
void ParamStore<T>::set_trainable(const std::string& prefix, bool on) {
    for (auto& p : params_)
        if (p.name.rfind(prefix, 0) == 0) p.var.set_requires_grad(on);
}

template <std::floating_point T>
void ParamStore<T>::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

template <std::floating_point T>
std::vector<Var<T>> ParamStore<T>::trainable() const {
    std::vector<Var<T>> out;
    for (const auto& p : params_)
        if (p.var.requires_grad()) out.push_back(p.var);
    return out;
}

}  // namespace hidiff
