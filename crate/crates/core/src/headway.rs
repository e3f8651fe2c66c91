//! Log-normal headway statistics: fitting, sampling, and per-interval
//! aggregation of detector passages.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Length of one statistics interval.
pub const INTERVAL_S: f64 = 900.0;

/// Smallest sigma ever reported by a fit; a constant sample has zero spread.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum HeadwayError {
    #[error("need at least 3 headways to fit, got {0}")]
    TooFewSamples(usize),
    #[error("headway sample {index} is not strictly positive ({value})")]
    NonPositive { index: usize, value: f64 },
}

/// Maximum-likelihood log-normal parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalFit<T = f64> {
    pub mu: T,
    pub sigma: T,
}

/// Fits `mu = mean(ln h)` and `sigma = popstd(ln h)`; sigma is floored at
/// [`SIGMA_FLOOR`].
pub fn fit_lognormal<T: Scalar>(headways: &[T]) -> Result<LogNormalFit<T>, HeadwayError> {
    if headways.len() < 3 {
        return Err(HeadwayError::TooFewSamples(headways.len()));
    }
    if let Some((index, value)) = headways
        .iter()
        .enumerate()
        .find(|(_, h)| !(**h > T::zero()) || !h.is_finite())
    {
        return Err(HeadwayError::NonPositive {
            index,
            value: value.as_f64(),
        });
    }
    let n = T::of_usize(headways.len());
    let mu = headways.iter().map(|h| h.ln()).sum::<T>() / n;
    let var = headways
        .iter()
        .map(|h| {
            let e = h.ln() - mu;
            e * e
        })
        .sum::<T>()
        / n;
    let sigma = var.sqrt().max(T::of(SIGMA_FLOOR));
    Ok(LogNormalFit { mu, sigma })
}

#[inline]
fn std_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::of(z)
}

/// One headway `exp(mu + sigma Z)`.
#[inline]
pub fn sample_headway<T: Scalar, R: Rng + ?Sized>(mu: T, sigma: T, rng: &mut R) -> T {
    (mu + sigma * std_normal::<T, R>(rng)).exp()
}

/// Headway enclosing an arbitrary point of a stationary stream, plus the
/// point's offset inside it.
///
/// The enclosing interval is length-biased (density proportional to
/// `h f(h)`), which for a log-normal is again log-normal with location
/// `mu + sigma^2`. The offset is uniform on `[0, h)`.
#[inline]
pub fn equilibrium_offset<T: Scalar, R: Rng + ?Sized>(mu: T, sigma: T, rng: &mut R) -> (T, T) {
    let h = sample_headway(mu + sigma * sigma, sigma, rng);
    let u: f64 = rng.random();
    (h, h * T::of(u))
}

/// A time-stamped passage recorded by a point detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorObservation {
    /// Seconds since simulation start.
    pub time: f64,
    /// Link whose midpoint detector recorded the passage.
    pub link: u8,
    pub lane: u8,
    /// Spot speed, m/s.
    pub speed: f64,
    pub vehicle_id: u64,
}

/// Traffic statistics of one lane of one link during one 900 s interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalTrafficStats {
    pub link: u8,
    pub lane: u8,
    pub interval: u32,
    /// Mean speed, m/s.
    pub v_mean: f64,
    /// Log-normal location of distance headways in meters.
    pub mu: f64,
    pub sigma: f64,
    pub n_obs: u32,
    /// Values were inherited from a neighbouring interval (sparse data).
    pub inherited: bool,
}

impl IntervalTrafficStats {
    pub fn interval_start_s(&self) -> f64 {
        self.interval as f64 * INTERVAL_S
    }
}

/// Which detectors exist and the period that must be covered.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkLayout {
    /// `(link, lane_count)` for every link carrying a detector.
    pub links: Vec<(u8, u8)>,
    /// Half-open covered period `[start, end)` in seconds.
    pub period: (f64, f64),
    /// Used for a lane that never sees three passages in any interval.
    pub fallback: FallbackStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallbackStats {
    pub v_mean: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for FallbackStats {
    /// Free flow at 70 mph with ~100 m spacing.
    fn default() -> Self {
        Self {
            v_mean: 31.3,
            mu: 4.4,
            sigma: 0.6,
        }
    }
}

#[inline]
pub fn interval_of(t: f64) -> u32 {
    (t / INTERVAL_S).floor().max(0.0) as u32
}

/// Per (link, lane, 900 s interval) speed and headway statistics.
///
/// Distance headways are reconstructed from consecutive passages at the same
/// detector as `(t_k - t_{k-1}) * (v_k + v_{k-1}) / 2` and attributed to the
/// interval of the later passage. Intervals with fewer than three usable
/// headways inherit the previous interval (or, at the start of the period, the
/// next populated one) and are flagged.
pub fn aggregate_interval_stats(
    observations: &[DetectorObservation],
    layout: &LinkLayout,
) -> Vec<IntervalTrafficStats> {
    let mut by_lane: BTreeMap<(u8, u8), Vec<DetectorObservation>> = BTreeMap::new();
    for o in observations {
        by_lane.entry((o.link, o.lane)).or_default().push(*o);
    }
    let first = interval_of(layout.period.0);
    let last = interval_of((layout.period.1 - 1e-9).max(layout.period.0));

    let mut out = Vec::new();
    for &(link, lanes) in &layout.links {
        for lane in 1..=lanes {
            let mut obs = by_lane.remove(&(link, lane)).unwrap_or_default();
            obs.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.vehicle_id.cmp(&b.vehicle_id)));

            let mut speeds: HashMap<u32, (f64, u32)> = HashMap::new();
            let mut headways: HashMap<u32, Vec<f64>> = HashMap::new();
            for (k, o) in obs.iter().enumerate() {
                let iv = interval_of(o.time);
                let e = speeds.entry(iv).or_insert((0.0, 0));
                e.0 += o.speed;
                e.1 += 1;
                if k > 0 {
                    let p = &obs[k - 1];
                    let h = (o.time - p.time) * 0.5 * (o.speed + p.speed);
                    if h > 0.0 && h.is_finite() {
                        headways.entry(iv).or_default().push(h);
                    }
                }
            }

            let mut lane_stats: Vec<Option<IntervalTrafficStats>> = Vec::new();
            for iv in first..=last {
                let (vsum, n) = speeds.get(&iv).copied().unwrap_or((0.0, 0));
                let fit = headways.get(&iv).and_then(|h| fit_lognormal(h).ok());
                lane_stats.push(fit.map(|f| IntervalTrafficStats {
                    link,
                    lane,
                    interval: iv,
                    v_mean: vsum / n as f64,
                    mu: f.mu,
                    sigma: f.sigma,
                    n_obs: n,
                    inherited: false,
                }));
            }

            let first_valid = lane_stats.iter().flatten().next().copied();
            let mut prev: Option<IntervalTrafficStats> = None;
            for (k, s) in lane_stats.into_iter().enumerate() {
                let iv = first + k as u32;
                let n_obs = speeds.get(&iv).map(|x| x.1).unwrap_or(0);
                let stat = match s {
                    Some(s) => s,
                    None => {
                        let src = prev.or(first_valid);
                        let (v_mean, mu, sigma) = match src {
                            Some(p) => (p.v_mean, p.mu, p.sigma),
                            None => (layout.fallback.v_mean, layout.fallback.mu, layout.fallback.sigma),
                        };
                        IntervalTrafficStats {
                            link,
                            lane,
                            interval: iv,
                            v_mean,
                            mu,
                            sigma,
                            n_obs,
                            inherited: true,
                        }
                    }
                };
                prev = Some(stat);
                out.push(stat);
            }
        }
    }
    out
}

/// Mean of `v`, `mu` and `sigma` over several runs' statistics for the same
/// buckets; `n_obs` is summed. A bucket is flagged inherited only when it was
/// inherited in every run.
pub fn average_stats(runs: &[Vec<IntervalTrafficStats>]) -> Vec<IntervalTrafficStats> {
    // Sums of (v, mu, sigma, n_obs), run count, inherited everywhere.
    type Sums = (f64, f64, f64, u32, u32, bool);
    let mut acc: BTreeMap<(u8, u8, u32), Sums> = BTreeMap::new();
    for run in runs {
        for s in run {
            let e = acc
                .entry((s.link, s.lane, s.interval))
                .or_insert((0.0, 0.0, 0.0, 0, 0, true));
            e.0 += s.v_mean;
            e.1 += s.mu;
            e.2 += s.sigma;
            e.3 += s.n_obs;
            e.4 += 1;
            e.5 &= s.inherited;
        }
    }
    acc.into_iter()
        .map(|((link, lane, interval), (v, mu, sg, n_obs, k, inh))| {
            let k = k as f64;
            IntervalTrafficStats {
                link,
                lane,
                interval,
                v_mean: v / k,
                mu: mu / k,
                sigma: sg / k,
                n_obs,
                inherited: inh,
            }
        })
        .collect()
}

/// Stats lookup by (link, lane, time) with previous-interval fallback.
#[derive(Debug, Clone, Default)]
pub struct StatsTable {
    map: HashMap<(u8, u8, u32), IntervalTrafficStats>,
}

/// A lookup result; `inherited` is set when the exact interval was missing or
/// itself inherited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsLookup {
    pub stats: IntervalTrafficStats,
    pub inherited: bool,
}

impl StatsTable {
    pub fn new(stats: impl IntoIterator<Item = IntervalTrafficStats>) -> Self {
        Self {
            map: stats.into_iter().map(|s| ((s.link, s.lane, s.interval), s)).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn get(&self, link: u8, lane: u8, t: f64) -> Option<StatsLookup> {
        let iv = interval_of(t);
        if let Some(s) = self.map.get(&(link, lane, iv)) {
            return Some(StatsLookup {
                stats: *s,
                inherited: s.inherited,
            });
        }
        (0..iv)
            .rev()
            .find_map(|k| self.map.get(&(link, lane, k)))
            .map(|s| StatsLookup {
                stats: *s,
                inherited: true,
            })
    }

    pub fn iter(&self) -> impl Iterator<Item = &IntervalTrafficStats> {
        self.map.values()
    }

    /// All entries ordered by (link, lane, interval).
    pub fn sorted(&self) -> Vec<IntervalTrafficStats> {
        let mut v: Vec<_> = self.map.values().copied().collect();
        v.sort_by_key(|s| (s.link, s.lane, s.interval));
        v
    }
}

#[derive(Serialize, Deserialize)]
struct StatsRow {
    link: u8,
    lane: u8,
    interval_start_s: f64,
    v_mean_mps: f64,
    mu: f64,
    sigma: f64,
    n_obs: u32,
}

/// CSV with header `link,lane,interval_start_s,v_mean_mps,mu,sigma,n_obs`.
pub fn write_stats_csv<W: Write>(stats: &[IntervalTrafficStats], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for s in stats {
        wr.serialize(StatsRow {
            link: s.link,
            lane: s.lane,
            interval_start_s: s.interval_start_s(),
            v_mean_mps: s.v_mean,
            mu: s.mu,
            sigma: s.sigma,
            n_obs: s.n_obs,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads the format written by [`write_stats_csv`]. Rows with fewer than three
/// observations are marked inherited.
pub fn read_stats_csv<R: std::io::Read>(r: R) -> csv::Result<Vec<IntervalTrafficStats>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize::<StatsRow>()
        .map(|row| {
            row.map(|r| IntervalTrafficStats {
                link: r.link,
                lane: r.lane,
                interval: interval_of(r.interval_start_s + 1e-6),
                v_mean: r.v_mean_mps,
                mu: r.mu,
                sigma: r.sigma,
                n_obs: r.n_obs,
                inherited: r.n_obs < 3,
            })
        })
        .collect()
}
