//! Finite spaces, data distributions on them, and the data-weighted inner
//! product `⟨u, v⟩ = Σ p_d(x) u(x) v(x)`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::efcore::BitEncoding;
use crate::error::{check_len, Error, Result};

/// Largest bit width `binary` will enumerate.
pub const MAX_BINARY_BITS: usize = 20;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceRepr {
    points: Vec<Vec<f64>>,
}

/// An ordered list of distinct points with an O(1) point → ordinal lookup.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SpaceRepr", into = "SpaceRepr")]
pub struct FiniteSpace {
    points: Vec<Vec<f64>>,
    index: HashMap<Vec<u64>, usize>,
}

impl PartialEq for FiniteSpace {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points
    }
}

impl TryFrom<SpaceRepr> for FiniteSpace {
    type Error = Error;
    fn try_from(r: SpaceRepr) -> Result<Self> {
        FiniteSpace::new(r.points)
    }
}

impl From<FiniteSpace> for SpaceRepr {
    fn from(s: FiniteSpace) -> Self {
        SpaceRepr { points: s.points }
    }
}

fn key(point: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 are the same point
    point.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl FiniteSpace {
    /// Builds a space from distinct points, keeping their order.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(points.len());
        let dim = points.first().map(Vec::len);
        for (i, p) in points.iter().enumerate() {
            if Some(p.len()) != dim {
                return Err(Error::DimensionMismatch {
                    context: "space point",
                    expected: dim.unwrap_or(0),
                    got: p.len(),
                });
            }
            if index.insert(key(p), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate point {p:?}")));
            }
        }
        Ok(FiniteSpace { points, index })
    }

    /// All `2^m` binary vectors in lexicographic order.
    pub fn binary(m: usize, encoding: BitEncoding) -> Result<Self> {
        if m > MAX_BINARY_BITS {
            return Err(Error::Capacity {
                what: "binary enumeration bits",
                value: m,
                limit: MAX_BINARY_BITS,
            });
        }
        let low = encoding.low();
        let points = (0..1usize << m)
            .map(|code| {
                (0..m)
                    .map(|j| {
                        if code >> (m - 1 - j) & 1 == 1 {
                            1.0
                        } else {
                            low
                        }
                    })
                    .collect()
            })
            .collect();
        FiniteSpace::new(points)
    }

    /// `{[0], [1], ..., [k-1]}`, the raw points of a categorical variable.
    pub fn categorical(k: usize) -> Self {
        FiniteSpace::new((0..k).map(|i| vec![i as f64]).collect())
            .expect("categorical points are distinct")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn into_points(self) -> Vec<Vec<f64>> {
        self.points
    }

    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        self.index.get(&key(point)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(Vec::as_slice)
    }
}

/// Convenience wrapper matching the two sign conventions by name.
pub fn enumerate_binary(m: usize, signs: BitEncoding) -> Result<FiniteSpace> {
    FiniteSpace::binary(m, signs)
}

/// A probability vector over a finite space (the empirical `p_d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataDistribution {
    pub space: FiniteSpace,
    weights: Vec<f64>,
}

impl DataDistribution {
    /// Validates that weights are nonnegative and sum to one within 1e-12
    /// (relative to the number of points).
    pub fn new(space: FiniteSpace, weights: Vec<f64>) -> Result<Self> {
        check_len("distribution weights", space.len(), weights.len())?;
        if space.is_empty() {
            return Err(Error::EmptySupport("data distribution"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 * (weights.len() as f64).max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(DataDistribution { space, weights })
    }

    /// Normalizes arbitrary nonnegative masses.
    pub fn from_masses(space: FiniteSpace, masses: Vec<f64>) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::EmptySupport("distribution masses"));
        }
        DataDistribution::new(space, masses.into_iter().map(|m| m / total).collect())
    }

    pub fn uniform(space: FiniteSpace) -> Result<Self> {
        let n = space.len();
        DataDistribution::new(space, vec![1.0 / n as f64; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `(point, weight)` pairs in enumeration order.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.space.iter().zip(self.weights.iter().copied())
    }

    /// First index with zero weight, if any.
    pub fn first_zero(&self) -> Option<usize> {
        self.weights.iter().position(|w| *w <= 0.0)
    }

    pub fn require_strictly_positive(&self) -> Result<()> {
        match self.first_zero() {
            Some(i) => Err(Error::ZeroMass(i)),
            None => Ok(()),
        }
    }
}

/// `Σ p_d(x) u(x) v(x)`.
pub fn weighted_dot(u: &[f64], v: &[f64], pd: &DataDistribution) -> Result<f64> {
    check_len("weighted_dot u", pd.len(), u.len())?;
    check_len("weighted_dot v", pd.len(), v.len())?;
    Ok(pd
        .weights
        .iter()
        .zip(u.iter().zip(v))
        .map(|(w, (a, b))| w * (a * b))
        .sum())
}

/// Relative frequencies with `smoothing` pseudo-counts spread uniformly over
/// the space. With no samples and positive smoothing the result is uniform.
pub fn empirical_distribution(
    samples: &[Vec<f64>],
    space: &FiniteSpace,
    smoothing: f64,
) -> Result<DataDistribution> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "smoothing must be nonnegative, got {smoothing}"
        )));
    }
    let mut counts = vec![smoothing / space.len() as f64; space.len()];
    for s in samples {
        let i = space.index_of(s).ok_or_else(|| Error::OutsideSupport {
            family: "finite space".into(),
            point: s.clone(),
        })?;
        counts[i] += 1.0;
    }
    DataDistribution::from_masses(space.clone(), counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_enumeration_examples() {
        let s = FiniteSpace::binary(1, BitEncoding::ZeroOne).unwrap();
        assert_eq!(s.points(), &[vec![0.0], vec![1.0]]);
        let s = FiniteSpace::binary(2, BitEncoding::PlusMinusOne).unwrap();
        assert_eq!(
            s.points(),
            &[
                vec![-1.0, -1.0],
                vec![-1.0, 1.0],
                vec![1.0, -1.0],
                vec![1.0, 1.0]
            ]
        );
        assert_eq!(s.index_of(&[1.0, -1.0]), Some(2));
    }

    #[test]
    fn binary_enumeration_cap() {
        assert_eq!(
            FiniteSpace::binary(20, BitEncoding::ZeroOne).unwrap().len(),
            1_048_576
        );
        assert!(matches!(
            FiniteSpace::binary(21, BitEncoding::ZeroOne),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn duplicates_rejected() {
        assert!(FiniteSpace::new(vec![vec![1.0], vec![1.0]]).is_err());
        assert!(FiniteSpace::new(vec![vec![0.0], vec![-0.0]]).is_err());
    }

    #[test]
    fn weighted_dot_examples() {
        let two = FiniteSpace::categorical(2);
        let uniform = DataDistribution::uniform(two.clone()).unwrap();
        assert_eq!(weighted_dot(&[1.0, 1.0], &[1.0, 1.0], &uniform).unwrap(), 1.0);
        assert_eq!(weighted_dot(&[1.0, 0.0], &[0.0, 1.0], &uniform).unwrap(), 0.0);
        let pd = DataDistribution::new(two, vec![0.25, 0.75]).unwrap();
        assert!((weighted_dot(&[2.0, -1.0], &[1.0, 1.0], &pd).unwrap() + 0.25).abs() < 1e-15);
        assert!(weighted_dot(&[1.0], &[1.0, 1.0], &pd).is_err());
    }

    #[test]
    fn empirical_examples() {
        let s = FiniteSpace::categorical(2);
        let (a, b) = (vec![0.0], vec![1.0]);
        let pd = empirical_distribution(&[a.clone(), a.clone(), b.clone()], &s, 0.0).unwrap();
        assert!((pd.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((pd.weights()[1] - 1.0 / 3.0).abs() < 1e-15);

        let pd = empirical_distribution(&[], &s, 1.0).unwrap();
        assert_eq!(pd.weights(), &[0.5, 0.5]);

        let mut samples = vec![a.clone(); 9];
        samples.push(b.clone());
        let pd = empirical_distribution(&samples, &s, 10.0).unwrap();
        assert!((pd.weights()[0] - 0.7).abs() < 1e-15);
        assert!((pd.weights()[1] - 0.3).abs() < 1e-15);

        assert!(empirical_distribution(&[vec![2.0]], &s, 0.0).is_err());
        assert!(empirical_distribution(&[], &s, 0.0).is_err());
    }

    #[test]
    fn strict_positivity_reported() {
        let pd = DataDistribution::new(FiniteSpace::categorical(3), vec![0.5, 0.0, 0.5]).unwrap();
        assert_eq!(pd.require_strictly_positive(), Err(Error::ZeroMass(1)));
    }
}
