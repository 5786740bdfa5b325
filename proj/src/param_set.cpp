#include "coat/param_set.hpp"

#include <stdexcept>

namespace coat {

void ParamSet::add(std::string name, Array value) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), std::move(value)});
}

std::size_t ParamSet::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

void ParamSet::set(std::size_t i, Array value) {
    Entry& e = entries_.at(i);
    if (value.shape != e.value.shape) {
        throw ShapeError("parameter '" + e.name + "' has shape " + to_string(e.value.shape) + ", got " +
                         to_string(value.shape));
    }
    e.value = std::move(value);
}

std::vector<std::string> ParamSet::names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

std::size_t ParamSet::total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.data.size();
    return n;
}

BoundParams bind(Graph& g, const ParamSet& params, bool trainable) {
    BoundParams b;
    b.set = &params;
    for (const auto& e : params) b.vars.push_back(trainable ? g.variable(e.value) : g.constant(e.value));
    return b;
}

}  // namespace coat
