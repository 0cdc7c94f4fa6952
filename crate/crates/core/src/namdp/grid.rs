use serde::Serialize;

use super::NamdpError;
use crate::noise::ActionBox;

/// Regular lattice of candidate actions `a'` over an action box.
///
/// Points are stored in row-major order: the last dimension varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionGrid {
    points: Vec<Vec<f64>>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    #[serde(skip)]
    bounds: ActionBox,
}

impl ActionGrid {
    /// `points_per_dim` points per dimension, including both box edges.
    pub fn regular(bounds: ActionBox, points_per_dim: usize) -> Result<Self, NamdpError> {
        let counts = vec![points_per_dim; bounds.dim()];
        Self::regular_per_dim(bounds, counts)
    }

    pub fn regular_per_dim(bounds: ActionBox, counts: Vec<usize>) -> Result<Self, NamdpError> {
        if counts.len() != bounds.dim() || counts.iter().any(|n| *n < 2) {
            return Err(NamdpError::Grid("need at least two points in every dimension".into()));
        }
        let axes: Vec<Vec<f64>> = counts
            .iter()
            .enumerate()
            .map(|(d, &n)| {
                let (lo, hi) = (bounds.low()[d], bounds.high()[d]);
                // lo + (hi - lo) * i / (n - 1) hits the edges and symmetric midpoints exactly.
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            })
            .collect();
        let spacing =
            counts.iter().enumerate().map(|(d, &n)| (bounds.high()[d] - bounds.low()[d]) / (n - 1) as f64).collect();
        let total: usize = counts.iter().product();
        let mut points = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; counts.len()];
            for d in (0..counts.len()).rev() {
                p[d] = axes[d][rem % counts[d]];
                rem /= counts[d];
            }
            points.push(p);
        }
        Ok(ActionGrid { points, counts, spacing, bounds })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Per-dimension step.
    pub fn spacings(&self) -> &[f64] {
        &self.spacing
    }

    /// Largest per-dimension step.
    pub fn spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn bounds(&self) -> &ActionBox {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    /// Index of the grid point closest to `a` (lowest index on ties).
    pub fn nearest_index(&self, a: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, p) in self.points.iter().enumerate() {
            let d = sq_dist(p, a);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    /// The same lattice refined so each axis has `factor * (n - 1) + 1` points.
    pub fn refined(&self, factor: usize) -> Result<Self, NamdpError> {
        let counts = self.counts.iter().map(|n| factor * (n - 1) + 1).collect();
        Self::regular_per_dim(self.bounds.clone(), counts)
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
