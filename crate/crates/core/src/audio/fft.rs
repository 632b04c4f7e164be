//! Thread-local cache of real FFT plans.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

thread_local! {
    static PLANNER: RefCell<Planner> = RefCell::new(Planner::default());
}

#[derive(Default)]
struct Planner {
    planner: RealFftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn RealToComplex<f64>>>,
    inverse: HashMap<usize, Arc<dyn ComplexToReal<f64>>>,
}

pub(crate) fn forward(n: usize) -> Arc<dyn RealToComplex<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let Planner {
            planner, forward, ..
        } = &mut *p;
        forward
            .entry(n)
            .or_insert_with(|| planner.plan_fft_forward(n))
            .clone()
    })
}

pub(crate) fn inverse(n: usize) -> Arc<dyn ComplexToReal<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let Planner {
            planner, inverse, ..
        } = &mut *p;
        inverse
            .entry(n)
            .or_insert_with(|| planner.plan_fft_inverse(n))
            .clone()
    })
}

/// Smallest size >= n whose only prime factors are 2, 3 and 5.
pub(crate) fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}
