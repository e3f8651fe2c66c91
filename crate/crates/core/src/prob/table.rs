use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::rng::derive_seed;
use crate::scalar::Scalar;

use super::{mc_base_case, NormalizedBaseQuery, ProbError, ProbEstimate};

/// Table coordinates of a two-lane query.
///
/// The two-lane probability is invariant under rescaling all lengths, and the
/// stream statistics make the sign of the sweep irrelevant, so it depends on
/// the query only through three quantities, which are the table axes:
///
/// * `sweep`: swept stream length in units of the median headway,
///   `|dv_rel| (1 - t_n) / exp(mu_n)`;
/// * `gap_z`: standardized log critical gap, `(ln g_n - mu_n) / sigma_n`;
/// * `sigma`: the log-normal scale.
///
/// Two regions are exact and bypass the table: `t_n > 1` (the change cannot
/// complete in time, p = 0) and `g_n = 0` (every gap is acceptable, p = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chart;

/// Where a query lands in chart space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartPoint<T> {
    Exact(T),
    Coords([T; Chart::AXES]),
}

impl Chart {
    pub const AXES: usize = 3;
    pub const AXIS_NAMES: [&'static str; Chart::AXES] = ["sweep", "gap_z", "sigma"];

    pub fn locate<T: Scalar>(q: &NormalizedBaseQuery<T>) -> ChartPoint<T> {
        if q.t_n > T::one() {
            return ChartPoint::Exact(T::zero());
        }
        if q.g_n <= T::zero() {
            return ChartPoint::Exact(T::one());
        }
        let sweep = q.sweep() * (-q.mu_n).exp();
        let gap_z = (q.g_n.ln() - q.mu_n) / q.sigma_n;
        ChartPoint::Coords([sweep, gap_z, q.sigma_n])
    }

    /// A normalized query with the given chart coordinates (`mu_n = 0`,
    /// `t_n = 0`).
    pub fn query_at<T: Scalar>(coords: &[T]) -> NormalizedBaseQuery<T> {
        let (sweep, gap_z, sigma) = (coords[0], coords[1], coords[2]);
        NormalizedBaseQuery {
            dv_rel: sweep,
            mu_n: T::zero(),
            sigma_n: sigma,
            g_n: (gap_z * sigma).exp(),
            t_n: T::zero(),
        }
    }
}

/// Node coordinates per chart axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<T = f64> {
    pub axes: Vec<Vec<T>>,
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(axes: Vec<Vec<T>>) -> Result<Self, ProbError> {
        let g = Self { axes };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ProbError> {
        if self.axes.len() != Chart::AXES {
            return Err(ProbError::Format(format!(
                "expected {} axes, got {}",
                Chart::AXES,
                self.axes.len()
            )));
        }
        for (axis, nodes) in self.axes.iter().enumerate() {
            if nodes.len() < 2 {
                return Err(ProbError::AxisTooShort {
                    axis,
                    nodes: nodes.len(),
                });
            }
            if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(ProbError::NonMonotoneAxis { axis });
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Chart coordinates of row-major node `index`.
    pub fn node(&self, mut index: usize) -> [T; Chart::AXES] {
        let mut c = [T::zero(); Chart::AXES];
        for k in (0..self.axes.len()).rev() {
            let n = self.axes[k].len();
            c[k] = self.axes[k][index % n];
            index /= n;
        }
        c
    }

    /// The production grid: 20 sweep nodes (dense near zero, up to 120
    /// median headways), 29 gap nodes on [-3, 4] and 8 sigma nodes on
    /// [0.2, 1.6].
    pub fn default_grid() -> Self {
        let sweep = [
            0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.5, 7.5, 10.0, 14.0, 20.0, 28.0, 40.0, 60.0, 85.0,
            120.0,
        ];
        let gap_z: Vec<f64> = (0..=28).map(|k| -3.0 + 0.25 * k as f64).collect();
        let sigma = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6];
        Self {
            axes: vec![
                sweep.iter().map(|&x| T::of(x)).collect(),
                gap_z.iter().map(|&x| T::of(x)).collect(),
                sigma.iter().map(|&x| T::of(x)).collect(),
            ],
        }
    }
}

/// Build provenance carried in the table file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableMeta {
    pub version: u32,
    pub samples: u64,
    pub seed: u64,
}

/// Precomputed two-lane success probabilities on a chart grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable<T = f64> {
    pub(crate) grid: GridSpec<T>,
    pub(crate) values: Vec<T>,
    pub(crate) meta: TableMeta,
}

impl<T: Scalar> LookupTable<T> {
    pub fn from_parts(grid: GridSpec<T>, values: Vec<T>, meta: TableMeta) -> Result<Self, ProbError> {
        grid.validate()?;
        let expected = grid.node_count();
        if values.len() != expected {
            return Err(ProbError::ValueCount {
                expected,
                got: values.len(),
            });
        }
        if let Some((index, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(ProbError::ValueRange {
                index,
                value: v.as_f64(),
            });
        }
        Ok(Self { grid, values, meta })
    }

    pub fn axes(&self) -> &[Vec<T>] {
        &self.grid.axes
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn meta(&self) -> TableMeta {
        self.meta
    }

    /// Chart-space lower and upper corners.
    pub fn hull(&self) -> ([T; Chart::AXES], [T; Chart::AXES]) {
        let mut lo = [T::zero(); Chart::AXES];
        let mut hi = [T::zero(); Chart::AXES];
        for (k, a) in self.grid.axes.iter().enumerate() {
            lo[k] = a[0];
            hi[k] = a[a.len() - 1];
        }
        (lo, hi)
    }

    /// Multilinear interpolation at chart coordinates, clamping onto the hull.
    pub fn interpolate(&self, coords: &[T; Chart::AXES]) -> ProbEstimate<T> {
        let axes = &self.grid.axes;
        let mut lower = [0usize; Chart::AXES];
        let mut frac = [T::zero(); Chart::AXES];
        let mut clamped = false;
        for k in 0..Chart::AXES {
            let a = &axes[k];
            let (first, last) = (a[0], a[a.len() - 1]);
            let mut x = coords[k];
            if x.is_nan() || x < first {
                x = first;
                clamped = true;
            } else if x > last {
                x = last;
                clamped = true;
            }
            let i = a.partition_point(|&node| node <= x).saturating_sub(1).min(a.len() - 2);
            lower[k] = i;
            frac[k] = (x - a[i]) / (a[i + 1] - a[i]);
        }

        let mut strides = [1usize; Chart::AXES];
        for k in (0..Chart::AXES - 1).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].len();
        }
        let base: usize = (0..Chart::AXES).map(|k| lower[k] * strides[k]).sum();

        let mut acc = T::zero();
        for corner in 0..(1usize << Chart::AXES) {
            let mut w = T::one();
            let mut idx = base;
            for k in 0..Chart::AXES {
                if corner & (1 << k) != 0 {
                    w = w * frac[k];
                    idx += strides[k];
                } else {
                    w = w * (T::one() - frac[k]);
                }
            }
            if w != T::zero() {
                acc = acc + w * self.values[idx];
            }
        }
        ProbEstimate {
            p: acc.clamp_unit(),
            stderr: T::zero(),
            clamped,
        }
    }
}

/// Runs [`mc_base_case`] at every grid node. Node `i` uses seed
/// `derive_seed(seed, i)`, so the result does not depend on scheduling.
///
/// The success probability cannot fall as the sweep grows, so each line
/// along the sweep axis is replaced by its isotonic fit; Monte Carlo noise
/// would otherwise make arrival distributions built from the table
/// non-monotone.
pub fn build_lookup_table<T: Scalar>(
    grid: &GridSpec<T>,
    samples_per_node: u64,
    seed: u64,
) -> Result<LookupTable<T>, ProbError> {
    grid.validate()?;
    let total = grid.node_count();
    let done = AtomicUsize::new(0);
    let values = (0..total)
        .into_par_iter()
        .map(|i| {
            let q = Chart::query_at(&grid.node(i));
            let e = mc_base_case(&q, samples_per_node, derive_seed(seed, i as u64))?;
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n.is_multiple_of((total / 10).max(1)) {
                log::info!("lookup table: {n}/{total} nodes");
            }
            Ok(e.p)
        })
        .collect::<Result<Vec<T>, ProbError>>()?;
    let values = monotone_in_sweep(values, grid);
    LookupTable::from_parts(
        grid.clone(),
        values,
        TableMeta {
            version: super::FORMAT_VERSION,
            samples: samples_per_node,
            seed,
        },
    )
}

fn monotone_in_sweep<T: Scalar>(mut values: Vec<T>, grid: &GridSpec<T>) -> Vec<T> {
    let n_sweep = grid.axes[0].len();
    let stride = values.len() / n_sweep;
    for line in 0..stride {
        let idx: Vec<usize> = (0..n_sweep).map(|i| line + i * stride).collect();
        let fitted = isotonic(&idx.iter().map(|&k| values[k]).collect::<Vec<_>>());
        for (k, v) in idx.into_iter().zip(fitted) {
            values[k] = v;
        }
    }
    values
}

/// Least-squares non-decreasing fit (pool adjacent violators).
fn isotonic<T: Scalar>(y: &[T]) -> Vec<T> {
    // Blocks of (mean, size).
    let mut blocks: Vec<(T, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (m2, n2) = blocks.pop().unwrap();
            let (m1, n1) = blocks.pop().unwrap();
            let n = n1 + n2;
            blocks.push(((m1 * T::of_usize(n1) + m2 * T::of_usize(n2)) / T::of_usize(n), n));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Two-lane success probability from the table.
pub fn interp_f2<T: Scalar>(table: &LookupTable<T>, q: &NormalizedBaseQuery<T>) -> ProbEstimate<T> {
    match Chart::locate(q) {
        ChartPoint::Exact(p) => ProbEstimate::exact(p),
        ChartPoint::Coords(c) => table.interpolate(&c),
    }
}
