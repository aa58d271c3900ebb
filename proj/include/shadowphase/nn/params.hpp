#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "shadowphase/errors.hpp"
#include "shadowphase/nn/graph.hpp"
#include "shadowphase/nn/tensor.hpp"

namespace shadowphase::nn {

// Ordered, named parameter set with Adam moment slots. Non-trainable entries
// hold state like batchnorm running statistics; the optimizer skips them but
// checkpoints include them.
template <class T>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> adam_m, adam_v;
        bool trainable = true;
    };

    Entry& add(const std::string& name, Tensor<T> value, bool trainable = true) {
        if (index_.count(name)) throw ConfigError("ParamStore: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, std::move(value), {}, {}, trainable});
        return entries_.back();
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Entry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
        return entries_[it->second];
    }
    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("ParamStore: unknown parameter " + name);
        return entries_[it->second];
    }

    Tensor<T>& value(const std::string& name) { return at(name).value; }
    const Tensor<T>& value(const std::string& name) const { return at(name).value; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::int64_t step = 0;

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Per-forward-pass cache binding store entries to graph variables, so one
// training step sees exactly one Var per parameter.
template <class T>
class ParamBinder {
  public:
    ParamBinder(Graph<T>& g, ParamStore<T>& store) : graph_(g), store_(store) {}

    typename Graph<T>::Var operator()(const std::string& name) {
        auto it = vars_.find(name);
        if (it != vars_.end()) return it->second;
        auto& entry = store_.at(name);
        const auto v = entry.trainable ? graph_.param(entry.value) : graph_.constant(entry.value);
        vars_[name] = v;
        return v;
    }

    // Raw (mutable) access for state the graph does not differentiate
    // through, e.g. batchnorm running statistics.
    Tensor<T>& raw(const std::string& name) { return store_.value(name); }

    const std::unordered_map<std::string, typename Graph<T>::Var>& bound() const { return vars_; }

  private:
    Graph<T>& graph_;
    ParamStore<T>& store_;
    std::unordered_map<std::string, typename Graph<T>::Var> vars_;
};

}  // namespace shadowphase::nn
