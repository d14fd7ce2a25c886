//! Numerical tolerances used across the crate.

/// Relative margin below which a step counts as null rather than timelike or non-causal.
pub const CAUSAL_RTOL: f64 = 1e-12;

/// Relative tolerance on ε for the straightening bisection.
pub const BISECTION_RTOL: f64 = 1e-8;

/// Allowed deviation of measure weights from total mass one.
pub const MASS_TOL: f64 = 1e-12;

/// Minimum number of gap scales used by the regularity fit.
pub const MIN_GAP_SCALES: usize = 20;

/// Minimum number of admissible samples before a regularity verdict is issued.
pub const MIN_ADMISSIBLE_PAIRS: usize = 20;

/// Tolerance on the fitted Hölder exponent for the log-Lipschitz verdict.
pub const EXPONENT_TOL: f64 = 0.05;

/// Default slack tolerance for (K,N)-convexity checks.
pub const KN_SLACK_TOL: f64 = 1e-9;

/// Default cap on the number of DAG steps before refusing to build.
pub const MAX_DAG_STEPS: usize = 50_000_000;

/// Step-count guard applied when the hop radius exceeds 2.
pub const WIDE_HOP_STEP_GUARD: usize = 5_000_000;

/// Largest support size handled by the brute-force permutation routines.
pub const MAX_PERMUTATION_SUPPORT: usize = 8;

/// Largest number of cells handled by exhaustive vertex enumeration of couplings.
pub const MAX_VERTEX_CELLS: usize = 25;
