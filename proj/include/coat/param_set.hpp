#pragma once

#include <map>
#include <string>
#include <vector>

#include "coat/graph.hpp"

namespace coat {

/// Named parameter tensors in insertion order. Names are unique and shapes
/// cannot change once added; values are mutable in place.
class ParamSet {
public:
    struct Entry {
        std::string name;
        Array value;
    };

    void add(std::string name, Array value);

    std::size_t size() const { return entries_.size(); }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t index_of(const std::string& name) const;

    const Entry& operator[](std::size_t i) const { return entries_.at(i); }
    const Array& at(const std::string& name) const { return entries_[index_of(name)].value; }
    std::span<double> data(std::size_t i) { return entries_.at(i).value.data; }
    std::span<double> data(const std::string& name) { return data(index_of(name)); }
    /// Replaces a value; the shape must match.
    void set(std::size_t i, Array value);

    std::vector<std::string> names() const;
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t total_size() const;

    friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.entries_ == b.entries_; }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;

    friend bool operator==(const Entry& a, const Entry& b) { return a.name == b.name && a.value == b.value; }
};

/// A ParamSet placed on a graph, either as variables or as constants.
struct BoundParams {
    const ParamSet* set = nullptr;
    std::vector<Var> vars;

    Var operator[](const std::string& name) const { return vars.at(set->index_of(name)); }
    Var operator[](std::size_t i) const { return vars.at(i); }
};

BoundParams bind(Graph& g, const ParamSet& params, bool trainable);

}  // namespace coat
