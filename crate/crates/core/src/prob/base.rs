use crate::headway::{equilibrium_offset, sample_headway};
use crate::rng::seeded;
use crate::scalar::Scalar;

use super::{NormalizedBaseQuery, ProbError, ProbEstimate};

/// Monte Carlo estimate of the two-lane success probability at unit distance.
///
/// Each sample places the ego at a uniform point of a stationary log-normal
/// renewal stream and sweeps it across the stream for `sweep()` units. The
/// sample succeeds if any gap overlapping the swept range, including the
/// initial one, is at least `g_n` long. With `t_n > 1` the lane change cannot
/// finish within the distance and every sample fails.
pub fn mc_base_case<T: Scalar>(
    q: &NormalizedBaseQuery<T>,
    samples: u64,
    seed: u64,
) -> Result<ProbEstimate<T>, ProbError> {
    q.validate()?;
    if samples == 0 {
        return Err(ProbError::OutOfRange {
            name: "samples",
            constraint: ">= 1",
            value: 0.0,
        });
    }
    if q.t_n > T::one() {
        return Ok(ProbEstimate {
            p: T::zero(),
            stderr: T::zero(),
            clamped: false,
        });
    }
    let sweep = q.sweep();
    let (mu, sigma, g) = (q.mu_n, q.sigma_n, q.g_n);
    let mut rng = seeded(seed);

    let mut hits: u64 = 0;
    for _ in 0..samples {
        let (h0, offset) = equilibrium_offset(mu, sigma, &mut rng);
        if h0 >= g {
            hits += 1;
            continue;
        }
        // Distance to the next vehicle boundary in the sweep direction; the
        // offset is uniform, so its mirror is too.
        let mut edge = h0 - offset;
        while edge <= sweep {
            let h = sample_headway(mu, sigma, &mut rng);
            if h >= g {
                hits += 1;
                break;
            }
            edge = edge + h;
        }
    }
    let n = T::from_u64(samples).expect("sample count fits in Scalar");
    let p = T::from_u64(hits).expect("hit count fits in Scalar") / n;
    let stderr = (p * (T::one() - p) / n).sqrt();
    Ok(ProbEstimate {
        p,
        stderr,
        clamped: false,
    })
}
