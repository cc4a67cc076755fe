#pragma once

namespace sad {

// Compensated accumulator (double-double). All gradient/statistics reductions
// run through this so that regrouping sums per tile cannot move the rounded
// result: the pair carries ~106 bits, which makes the final double independent
// of the summation tree for everything short of catastrophic cancellation.
// Requires strict IEEE addition (build disables contraction/reassociation).
struct Accum {
    double hi = 0.0;
    double lo = 0.0;

    void add(double x) {
        // Knuth two-sum: works for any exponent ordering.
        double s = hi + x;
        double bb = s - hi;
        double err = (hi - (s - bb)) + (x - bb);
        hi = s;
        lo += err;
    }

    void add(const Accum& o) {
        add(o.hi);
        add(o.lo);
    }

    double value() const { return hi + lo; }

    void reset() { hi = lo = 0.0; }
};

} // namespace sad
