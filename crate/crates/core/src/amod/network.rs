use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A piecewise-constant demand segment, in effect from `start_iteration`
/// until the next segment starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSegment {
    pub start_iteration: usize,
    /// `n x n` arrival rates; diagonal entries are ignored.
    pub rates: Vec<Vec<f64>>,
}

/// Station graph of an AMoD system: a complete digraph on `n` stations.
///
/// Stations are numbered from 0. Links are all ordered pairs `(r, s)` with
/// `r != s`, in row-major order, so link `(r, s)` has index
/// `r (n - 1) + s - [s > r]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub n: usize,
    /// `n x n` travel times in time steps; diagonal entries are ignored.
    pub travel_times: Vec<Vec<f64>>,
    /// `n x n` arrival rates in customers per time step.
    pub arrival_rates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<RateSegment>,
}

pub fn link_count(n: usize) -> usize {
    n * n.saturating_sub(1)
}

pub fn link_index(n: usize, r: usize, s: usize) -> Option<usize> {
    if r >= n || s >= n || r == s {
        return None;
    }
    Some(r * (n - 1) + if s > r { s - 1 } else { s })
}

/// Ordered link list `(origin, destination)`.
pub fn links(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(link_count(n));
    for r in 0..n {
        for s in 0..n {
            if r != s {
                out.push((r, s));
            }
        }
    }
    out
}

fn check_square(what: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument(format!("{what} must be {n}x{n}")));
    }
    Ok(())
}

fn check_rates(what: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    check_square(what, m, n)?;
    for (r, s) in links(n) {
        let v = m[r][s];
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("{what}[{r}][{s}] = {v} must be finite and nonnegative")));
        }
    }
    Ok(())
}

fn flatten(m: &[Vec<f64>], n: usize) -> DVector<f64> {
    DVector::from_iterator(link_count(n), links(n).into_iter().map(|(r, s)| m[r][s]))
}

fn unflatten(v: &DVector<f64>, n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (k, (r, s)) in links(n).into_iter().enumerate() {
        m[r][s] = v[k];
    }
    m
}

impl NetworkSpec {
    /// Uniform travel time and arrival rate on every link.
    pub fn uniform(n: usize, travel_time: f64, rate: f64) -> Result<Self> {
        let spec = NetworkSpec {
            n,
            travel_times: vec![vec![travel_time; n]; n],
            arrival_rates: vec![vec![rate; n]; n],
            schedule: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from per-link vectors in link order.
    pub fn from_link_vectors(n: usize, travel: &DVector<f64>, rates: &DVector<f64>) -> Result<Self> {
        let m = link_count(n);
        if travel.len() != m || rates.len() != m {
            return Err(Error::dims("link vectors", m, travel.len().max(rates.len())));
        }
        let spec = NetworkSpec {
            n,
            travel_times: unflatten(travel, n),
            arrival_rates: unflatten(rates, n),
            schedule: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 {
            return Err(Error::InvalidArgument(format!("network needs at least 2 stations, got {n}")));
        }
        check_square("travel_times", &self.travel_times, n)?;
        for (r, s) in links(n) {
            let t = self.travel_times[r][s];
            if !(t.is_finite() && t >= 1.0) {
                return Err(Error::InvalidArgument(format!("travel_times[{r}][{s}] = {t} must be >= 1")));
            }
        }
        check_rates("arrival_rates", &self.arrival_rates, n)?;
        for (k, seg) in self.schedule.iter().enumerate() {
            check_rates(&format!("schedule[{k}].rates"), &seg.rates, n)?;
        }
        if let Some(first) = self.schedule.first() {
            if first.start_iteration != 0 {
                return Err(Error::InvalidArgument("schedule must start at iteration 0".into()));
            }
        }
        if self.schedule.windows(2).any(|w| w[1].start_iteration <= w[0].start_iteration) {
            return Err(Error::InvalidArgument("schedule start iterations must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn link_count(&self) -> usize {
        link_count(self.n)
    }

    pub fn travel_vector(&self) -> DVector<f64> {
        flatten(&self.travel_times, self.n)
    }

    pub fn rate_vector(&self) -> DVector<f64> {
        flatten(&self.arrival_rates, self.n)
    }

    /// Index of the schedule segment active at `iteration`, if a schedule is set.
    pub fn segment_at(&self, iteration: usize) -> Option<usize> {
        if self.schedule.is_empty() {
            return None;
        }
        Some(self.schedule.partition_point(|s| s.start_iteration <= iteration) - 1)
    }

    /// Arrival rates in effect at `iteration`.
    pub fn rates_at(&self, iteration: usize) -> DVector<f64> {
        match self.segment_at(iteration) {
            Some(k) => flatten(&self.schedule[k].rates, self.n),
            None => self.rate_vector(),
        }
    }

    /// The same graph with the given per-link rates and no schedule.
    pub fn with_rates(&self, rates: &DVector<f64>) -> Result<Self> {
        NetworkSpec::from_link_vectors(self.n, &self.travel_vector(), rates)
    }
}
