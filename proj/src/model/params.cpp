#include "gtalk/model/params.hpp"

#include "gtalk/util/error.hpp"

#include <algorithm>
#include <cmath>

namespace gtalk::model {

std::size_t ParameterSet::add(std::string name, Array value) {
    if (contains(name)) throw DataError("duplicate parameter name '" + name + "'");
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
}

std::size_t ParameterSet::index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw DataError("unknown parameter '" + name + "'");
    return static_cast<std::size_t>(it - names_.begin());
}

bool ParameterSet::contains(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
}

std::vector<Var> ParameterSet::bind(diff::Tape& tape, bool trainable) const {
    std::vector<Var> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(tape.leaf_ref(v, trainable));
    return out;
}

Linear add_linear(ParameterSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng, Init init) {
    Array w({in, out});
    if (init != Init::zero) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out)) * (init == Init::small ? 0.01 : 1.0);
        for (double& v : w.values()) v = rng.uniform(-bound, bound);
    }
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = params.add(name + ".weight", std::move(w));
    l.bias = params.add(name + ".bias", Array({1, out}));
    return l;
}

Var apply(const Linear& layer, const std::vector<Var>& bound, Var x) {
    const std::size_t rows = x.shape().at(0);
    return diff::matmul(x, bound.at(layer.weight)) + diff::tile_rows(bound.at(layer.bias), rows);
}

} // namespace gtalk::model
