//! Desk-scale workbench for Fourier uniformity of multiplicative functions.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`sieve`] — segmented Liouville/Ω sieve and prime ranges `[P, 2P]`.
//! 2. [`expsum`] — short-interval exponential sums `sum_{x ≤ n < x+H} f(n) e(nθ)`,
//!    FFT frequency extraction, Elliott-type prime deviations, and the
//!    hit → configuration conversion.
//! 3. [`config`] — configurations `(A, α_•, H)` over an ambient scale
//!    `(Y, P, 𝒫)`, the distance `dist(p,q;x,y)`, relation quadruples, lifts
//!    and towers.
//! 4. [`cluster`] — metric clusters of point/prime pairs: size bounds,
//!    center constructions, frequency lifts, greedy coverings, regularity,
//!    replication, pattern counts.
//! 5. [`graph`] — the relation (multiplicative) graph, prime-product path
//!    records, unbalanced closed paths, ball growth.
//! 6. [`structure`] — slice seeds, the iterative local decomposition,
//!    lift-or-split towers, and modular structure recovery `α_x ≈ a_x/q₀ + β_x`.
//! 7. [`dirichlet`] — exact Dirichlet characters, prime Dirichlet polynomials,
//!    large-value scans, rational approximation, and the global fit
//!    `α_x ≈ a₀/q₀ + T₀/x`.
//!
//! Everything is deterministic given explicit seeds; analysis outcomes
//! (e.g. "no structure found at this threshold") are encoded in result types,
//! not errors.

pub mod config;
pub mod cluster;
pub mod dirichlet;
pub mod expsum;
pub mod graph;
pub mod numutil;
pub mod sieve;
pub mod structure;
pub mod synth;

pub use config::{Ambient, Configuration, Lift, Mode, Quadruple, Tower};
pub use expsum::{FrequencyHit, Window};
pub use sieve::{PrimeRange, SieveWindow};

#[cfg(test)]
mod smoke {
    #[test]
    fn modules_link() {
        let pr = crate::sieve::primes_in(10).unwrap();
        assert_eq!(pr.primes, vec![11, 13, 17, 19]);
    }
}
