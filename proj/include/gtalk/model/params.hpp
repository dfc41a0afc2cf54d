#pragma once

#include "gtalk/diffmath/ops.hpp"
#include "gtalk/util/rng.hpp"

#include <string>
#include <vector>

namespace gtalk::model {

using diff::Array;
using diff::Var;

// Named dense parameters, kept in insertion order.
class ParameterSet {
public:
    std::size_t add(std::string name, Array value);
    std::size_t index(const std::string& name) const;  // throws DataError if missing
    bool contains(const std::string& name) const;

    Array& operator[](std::size_t i) { return values_.at(i); }
    const Array& operator[](std::size_t i) const { return values_.at(i); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    std::size_t size() const { return values_.size(); }
    std::size_t scalar_count() const;

    // One non-owning tape leaf per parameter, in index order.
    std::vector<Var> bind(diff::Tape& tape, bool trainable = true) const;

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
    std::vector<std::string> names_;
    std::vector<Array> values_;
};

struct Linear {
    std::size_t weight = 0;  // [in, out]
    std::size_t bias = 0;    // [1, out]
    std::size_t in = 0, out = 0;
};

enum class Init { xavier, small, zero };

// Xavier-uniform weights (scaled by 0.01 for Init::small), zero bias.
Linear add_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                  Init init = Init::xavier);

// x [N, in] -> x W + b.
Var apply(const Linear& layer, const std::vector<Var>& bound, Var x);

} // namespace gtalk::model
