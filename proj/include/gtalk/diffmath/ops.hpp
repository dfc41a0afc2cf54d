#pragma once

#include "gtalk/diffmath/tape.hpp"

#include <functional>
#include <optional>
#include <span>

namespace gtalk::diff {

// Every op records itself on the tape of its inputs. Shapes must match exactly;
// the only implicit broadcast is a {1}-shaped scalar against an array.
// Mismatches throw ShapeError naming the op and both shapes.

Var matmul(Var a, Var b);                 // [m,k] x [k,n] -> [m,n]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                    // elementwise
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var softmax(Var a);                       // over the last axis
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var scale(Var a, double c);
Var reduce_sum(Var a);                    // all elements -> {1}
Var layer_norm(Var a, double eps = 1e-5); // over the last axis, no affine

// Structural helpers. None of them broadcast implicitly.
Var transpose(Var a);                     // rank-2 only
Var reshape(Var a, Shape shape);
Var tile_rows(Var row, std::size_t rows); // [1,n] -> [rows,n]
Var normalize_rows(Var a);                // rank-2; each row scaled to unit length
Var mean_abs(Var a);                      // mean |x| -> {1}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// f records a computation of x on the given tape and returns its output.
using RecordedFn = std::function<Var(Tape&, Var)>;

// Compares the tape gradient of sum(seed * f(x)) against central differences and
// returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|). When no seed is
// given a fixed pseudo-random one is used. Throws NumericError if f is non-finite.
double finite_difference_check(const RecordedFn& f, const Array& x, double eps,
                               std::optional<Array> seed = std::nullopt);

} // namespace gtalk::diff
