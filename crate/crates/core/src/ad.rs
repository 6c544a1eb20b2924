//! Forward-mode automatic differentiation on a fixed-capacity gradient.
//!
//! Problem evaluators are written once, generic over [`Real`], and
//! instantiated with `f64` for plain values and with [`Dual`] to obtain exact
//! first derivatives with respect to every decision variable in a single
//! sweep. The capacity bound [`GRAD_CAP`] limits the number of decision
//! variables a differentiated problem may carry.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Maximum number of decision variables a `Dual` gradient can track.
pub const GRAD_CAP: usize = 64;

/// Scalar abstraction shared by plain evaluation and derivative sweeps.
///
/// Branch decisions inside generic code must compare `val()`s, so the same
/// control flow is taken for `f64` and `Dual` inputs.
pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lift a constant (zero derivative).
    fn lit(x: f64) -> Self;
    /// Numeric value.
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sq(self) -> Self {
        self * self
    }
    /// Value-based max; keeps the derivative of the selected branch.
    fn max_val(self, other: Self) -> Self {
        if self.val() >= other.val() {
            self
        } else {
            other
        }
    }
    fn min_val(self, other: Self) -> Self {
        if self.val() <= other.val() {
            self
        } else {
            other
        }
    }
}

impl Real for f64 {
    #[inline(always)]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn val(self) -> f64 {
        self
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
}

/// First-order dual number carrying value and a dense gradient of length `n`.
#[derive(Clone, Copy)]
pub struct Dual {
    v: f64,
    n: usize,
    d: [f64; GRAD_CAP],
}

impl Dual {
    /// Constant with an `n`-dimensional zero gradient.
    #[inline]
    pub fn constant(v: f64, n: usize) -> Self {
        debug_assert!(n <= GRAD_CAP);
        Dual {
            v,
            n,
            d: [0.0; GRAD_CAP],
        }
    }

    /// The `i`-th independent variable: unit derivative in slot `i`.
    #[inline]
    pub fn seeded(v: f64, n: usize, i: usize) -> Self {
        debug_assert!(i < n && n <= GRAD_CAP);
        let mut d = [0.0; GRAD_CAP];
        d[i] = 1.0;
        Dual { v, n, d }
    }

    #[inline]
    pub fn grad(&self) -> &[f64] {
        &self.d[..self.n]
    }
}

impl PartialEq for Dual {
    fn eq(&self, other: &Self) -> bool {
        self.v == other.v
    }
}

impl PartialOrd for Dual {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.v.partial_cmp(&other.v)
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        let n = self.n.max(rhs.n);
        let mut out = self;
        out.n = n;
        out.v += rhs.v;
        for i in 0..n {
            out.d[i] += rhs.d[i];
        }
        out
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        let n = self.n.max(rhs.n);
        let mut out = self;
        out.n = n;
        out.v -= rhs.v;
        for i in 0..n {
            out.d[i] -= rhs.d[i];
        }
        out
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        let n = self.n.max(rhs.n);
        let mut out = self;
        out.n = n;
        out.v = self.v * rhs.v;
        for i in 0..n {
            out.d[i] = self.v * rhs.d[i] + rhs.v * self.d[i];
        }
        out
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let n = self.n.max(rhs.n);
        let q = self.v / rhs.v;
        let mut out = self;
        out.n = n;
        out.v = q;
        for i in 0..n {
            out.d[i] = (self.d[i] - q * rhs.d[i]) / rhs.v;
        }
        out
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        let mut out = self;
        out.v = -self.v;
        for i in 0..self.n {
            out.d[i] = -self.d[i];
        }
        out
    }
}

impl Real for Dual {
    #[inline]
    fn lit(x: f64) -> Self {
        // Zero-length gradient; combining with a seeded operand widens the
        // result to the operand's length.
        Dual::constant(x, 0)
    }
    #[inline]
    fn val(self) -> f64 {
        self.v
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let mut out = self;
        out.v = s;
        if s > 0.0 {
            let inv = 0.5 / s;
            for i in 0..self.n {
                out.d[i] *= inv;
            }
        } else {
            for i in 0..self.n {
                out.d[i] = 0.0;
            }
        }
        out
    }
    #[inline]
    fn abs(self) -> Self {
        if self.v < 0.0 {
            -self
        } else {
            self
        }
    }
}

/// Reverse-mode scalar recorded on a thread-local tape.
///
/// One forward evaluation builds the tape; a single backward sweep then
/// yields the gradient of any weighted combination of recorded outputs —
/// exactly what the augmented-Lagrangian inner loop needs, at a cost
/// independent of the number of decision variables. Constants stay off the
/// tape. The tape must be reset before each recording via [`tape_reset`].
pub mod reverse {
    use super::Real;
    use std::cell::RefCell;

    const NONE: u32 = u32::MAX;

    #[derive(Clone, Copy)]
    struct TapeNode {
        p1: u32,
        d1: f64,
        p2: u32,
        d2: f64,
    }

    thread_local! {
        static TAPE: RefCell<Vec<TapeNode>> = RefCell::new(Vec::with_capacity(4096));
    }

    /// Clears the tape and registers `n` independent variables.
    pub fn tape_reset(values: &[f64]) -> Vec<Rev> {
        TAPE.with(|t| {
            let mut tape = t.borrow_mut();
            tape.clear();
            values
                .iter()
                .map(|&v| {
                    let idx = tape.len() as u32;
                    tape.push(TapeNode {
                        p1: NONE,
                        d1: 0.0,
                        p2: NONE,
                        d2: 0.0,
                    });
                    Rev { v, idx }
                })
                .collect()
        })
    }

    /// Registers a variable that participates without being seeded (its
    /// adjoint is discarded); used for pinned entries.
    pub fn tape_constant(v: f64) -> Rev {
        Rev { v, idx: NONE }
    }

    fn push1(v: f64, p1: u32, d1: f64) -> Rev {
        if p1 == NONE {
            return Rev { v, idx: NONE };
        }
        TAPE.with(|t| {
            let mut tape = t.borrow_mut();
            let idx = tape.len() as u32;
            tape.push(TapeNode {
                p1,
                d1,
                p2: NONE,
                d2: 0.0,
            });
            Rev { v, idx }
        })
    }

    fn push2(v: f64, p1: u32, d1: f64, p2: u32, d2: f64) -> Rev {
        if p1 == NONE && p2 == NONE {
            return Rev { v, idx: NONE };
        }
        TAPE.with(|t| {
            let mut tape = t.borrow_mut();
            let idx = tape.len() as u32;
            tape.push(TapeNode { p1, d1, p2, d2 });
            Rev { v, idx }
        })
    }

    /// Backward sweep: `seeds` assigns output adjoints (node, weight); the
    /// first `n` tape slots are the variables registered by [`tape_reset`].
    pub fn tape_gradient(seeds: &[(Rev, f64)], n: usize, grad: &mut [f64]) {
        TAPE.with(|t| {
            let tape = t.borrow();
            let mut adjoint = vec![0.0f64; tape.len()];
            for (node, weight) in seeds {
                if node.idx != NONE && *weight != 0.0 {
                    adjoint[node.idx as usize] += weight;
                }
            }
            for i in (n..tape.len()).rev() {
                let a = adjoint[i];
                if a == 0.0 {
                    continue;
                }
                let node = &tape[i];
                if node.p1 != NONE {
                    adjoint[node.p1 as usize] += a * node.d1;
                }
                if node.p2 != NONE {
                    adjoint[node.p2 as usize] += a * node.d2;
                }
            }
            grad[..n].copy_from_slice(&adjoint[..n]);
        })
    }

    /// Reverse-mode scalar; see the module docs.
    #[derive(Clone, Copy)]
    pub struct Rev {
        v: f64,
        idx: u32,
    }

    impl PartialEq for Rev {
        fn eq(&self, other: &Self) -> bool {
            self.v == other.v
        }
    }

    impl PartialOrd for Rev {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            self.v.partial_cmp(&other.v)
        }
    }

    impl std::ops::Add for Rev {
        type Output = Rev;
        #[inline]
        fn add(self, rhs: Rev) -> Rev {
            push2(self.v + rhs.v, self.idx, 1.0, rhs.idx, 1.0)
        }
    }

    impl std::ops::Sub for Rev {
        type Output = Rev;
        #[inline]
        fn sub(self, rhs: Rev) -> Rev {
            push2(self.v - rhs.v, self.idx, 1.0, rhs.idx, -1.0)
        }
    }

    impl std::ops::Mul for Rev {
        type Output = Rev;
        #[inline]
        fn mul(self, rhs: Rev) -> Rev {
            push2(self.v * rhs.v, self.idx, rhs.v, rhs.idx, self.v)
        }
    }

    impl std::ops::Div for Rev {
        type Output = Rev;
        #[inline]
        fn div(self, rhs: Rev) -> Rev {
            let q = self.v / rhs.v;
            push2(q, self.idx, 1.0 / rhs.v, rhs.idx, -q / rhs.v)
        }
    }

    impl std::ops::Neg for Rev {
        type Output = Rev;
        #[inline]
        fn neg(self) -> Rev {
            push1(-self.v, self.idx, -1.0)
        }
    }

    impl Real for Rev {
        #[inline]
        fn lit(x: f64) -> Self {
            Rev { v: x, idx: NONE }
        }
        #[inline]
        fn val(self) -> f64 {
            self.v
        }
        #[inline]
        fn sqrt(self) -> Self {
            let s = self.v.sqrt();
            let d = if s > 0.0 { 0.5 / s } else { 0.0 };
            push1(s, self.idx, d)
        }
        #[inline]
        fn abs(self) -> Self {
            if self.v < 0.0 {
                push1(-self.v, self.idx, -1.0)
            } else {
                self
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d2(v: f64, i: usize) -> Dual {
        Dual::seeded(v, 2, i)
    }

    #[test]
    fn product_rule() {
        let x = d2(3.0, 0);
        let y = d2(4.0, 1);
        let p = x * y;
        assert_eq!(p.val(), 12.0);
        assert_eq!(p.grad(), &[4.0, 3.0]);
    }

    #[test]
    fn quotient_and_sqrt() {
        let x = d2(9.0, 0);
        let y = d2(2.0, 1);
        let q = x / y;
        assert!((q.val() - 4.5).abs() < 1e-15);
        assert!((q.grad()[0] - 0.5).abs() < 1e-15);
        assert!((q.grad()[1] + 2.25).abs() < 1e-15);
        let r = x.sqrt();
        assert!((r.val() - 3.0).abs() < 1e-15);
        assert!((r.grad()[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn abs_branches_on_sign() {
        let x = d2(-2.0, 0);
        let a = x.abs();
        assert_eq!(a.val(), 2.0);
        assert_eq!(a.grad()[0], -1.0);
    }
}
