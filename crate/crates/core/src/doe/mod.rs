//! Model-based design of experiments: grid search over pulse intensities,
//! propane delay and temperature for parameter precision or for
//! mechanism discrimination.

pub mod divergence;
pub mod precision;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TapError};
use crate::reactor::{ExperimentDesign, DEFAULT_HORIZON};

/// Full-factorial grid of propane/oxygen pump-probe designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpace {
    pub c3h8_nmol: Vec<f64>,
    pub o2_nmol: Vec<f64>,
    /// Propane delay after the oxygen pulse, s.
    pub delay_s: Vec<f64>,
    pub temperature_k: Vec<f64>,
    pub horizon: f64,
}

impl Default for DesignSpace {
    fn default() -> Self {
        DesignSpace {
            c3h8_nmol: vec![0.5, 1.0, 2.0],
            o2_nmol: vec![0.5, 1.0, 2.0],
            delay_s: vec![0.0, 0.15, 0.3, 0.45, 0.6],
            temperature_k: vec![600.0, 650.0, 700.0, 750.0],
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl DesignSpace {
    /// A space holding exactly one design point.
    pub fn single(c3h8: f64, o2: f64, delay: f64, temperature: f64) -> Self {
        DesignSpace {
            c3h8_nmol: vec![c3h8],
            o2_nmol: vec![o2],
            delay_s: vec![delay],
            temperature_k: vec![temperature],
            horizon: DEFAULT_HORIZON,
        }
    }

    pub fn len(&self) -> usize {
        self.c3h8_nmol.len() * self.o2_nmol.len() * self.delay_s.len() * self.temperature_k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid point; propane intensity varies slowest, temperature fastest.
    pub fn designs(&self) -> Result<Vec<ExperimentDesign>> {
        if self.is_empty() {
            return Err(TapError::invalid("design space is empty"));
        }
        let mut out = Vec::with_capacity(self.len());
        for &c in &self.c3h8_nmol {
            for &o in &self.o2_nmol {
                for &d in &self.delay_s {
                    for &t in &self.temperature_k {
                        let design = ExperimentDesign::pump_probe(c, o, d, t).with_horizon(self.horizon);
                        design.validate()?;
                        out.push(design);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A grid point whose evaluation failed; kept so reports can list it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFailure {
    pub index: usize,
    pub design: ExperimentDesign,
    pub error: String,
}

/// Runs `f` over `items` (in parallel when enabled), keeping input order.
pub(crate) fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Ranks with ties given their average rank (1-based).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
/// `None` for fewer than two pairs or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Evenly spread positions `0, .., len-1` (always including both ends).
pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    if count <= 1 {
        return vec![0];
    }
    let mut out: Vec<usize> =
        (0..count).map(|i| ((i as f64) * (len - 1) as f64 / (count - 1) as f64).round() as usize).collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_order() {
        let s = DesignSpace::default();
        let d = s.designs().unwrap();
        assert_eq!(d.len(), 180);
        assert_eq!(d[0], ExperimentDesign::pump_probe(0.5, 0.5, 0.0, 600.0));
        assert_eq!(d[1].temperature, 650.0);
        assert_eq!(d[179], ExperimentDesign::pump_probe(2.0, 2.0, 0.6, 750.0));
    }

    #[test]
    fn empty_and_invalid_spaces() {
        let mut s = DesignSpace::default();
        s.delay_s.clear();
        assert!(s.designs().is_err());
        let mut s = DesignSpace::single(1.0, 1.0, 3.0, 700.0);
        assert!(s.designs().is_err());
        s.delay_s = vec![0.1];
        assert_eq!(s.designs().unwrap().len(), 1);
    }

    #[test]
    fn spearman_hand_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        // d = (0, 1, -1, 0): 1 - 6*2/(4*15) = 0.8
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spread_covers_ends() {
        assert_eq!(spread_indices(180, 5), vec![0, 45, 90, 134, 179]);
        assert_eq!(spread_indices(3, 10), vec![0, 1, 2]);
    }
}
