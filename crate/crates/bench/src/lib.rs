//! Shared inputs for the benchmarks.

use dspt_core::LogitVector;

/// Deterministic logits spread over roughly [-scale, scale].
pub fn logits(classes: usize, scale: f64) -> LogitVector {
    let values = (0..classes)
        .map(|i| {
            let t = ((i as f64 + 0.5) * 0.618_033_988_749_895).fract();
            scale * (2.0 * t - 1.0)
        })
        .collect();
    LogitVector::new(values).expect("finite logits")
}
