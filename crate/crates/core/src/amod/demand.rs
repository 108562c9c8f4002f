use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::network::{link_count, link_index};
use crate::error::{Error, Result};

/// Rates at or above this use the rounded normal approximation.
pub const INVERSION_LIMIT: f64 = 30.0;

fn poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if rate < INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u32;
        let mut p = (-rate).exp();
        let mut cdf = p;
        while u > cdf && p > 0.0 {
            k += 1;
            p *= rate / k as f64;
            cdf += p;
        }
        k as f64
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (rate + rate.sqrt() * z).round().max(0.0)
    }
}

/// Independent Poisson arrivals on every link.
#[derive(Debug, Clone)]
pub struct PoissonDemand {
    rates: DVector<f64>,
    rng: ChaCha8Rng,
}

impl PoissonDemand {
    pub fn new(rates: DVector<f64>, seed: u64) -> Result<Self> {
        check_rates(&rates)?;
        Ok(PoissonDemand {
            rates,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn rates(&self) -> &DVector<f64> {
        &self.rates
    }

    /// Changes the rates without reseeding.
    pub fn set_rates(&mut self, rates: DVector<f64>) -> Result<()> {
        check_rates(&rates)?;
        if rates.len() != self.rates.len() {
            return Err(Error::dims("Poisson rates", self.rates.len(), rates.len()));
        }
        self.rates = rates;
        Ok(())
    }

    pub fn sample(&mut self) -> DVector<f64> {
        let rng = &mut self.rng;
        self.rates.map(|rate| poisson(rate, rng))
    }
}

fn check_rates(rates: &DVector<f64>) -> Result<()> {
    if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::InvalidArgument("Poisson rates must be finite and nonnegative".into()));
    }
    Ok(())
}

/// One row of a demand trace: `count` customers arriving on link
/// `(origin, dest)` at `iteration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandRecord {
    pub iteration: usize,
    pub origin: usize,
    pub dest: usize,
    pub count: f64,
}

pub const DEMAND_HEADER: [&str; 4] = ["iteration", "origin", "dest", "count"];

/// Recorded per-link arrivals, for export and replay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemandTrace {
    n: usize,
    steps: BTreeMap<usize, DVector<f64>>,
}

impl DemandTrace {
    pub fn new(n: usize) -> Self {
        DemandTrace { n, steps: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, iteration: usize, d: &DVector<f64>) -> Result<()> {
        if d.len() != link_count(self.n) {
            return Err(Error::dims("demand vector", link_count(self.n), d.len()));
        }
        self.steps.insert(iteration, d.clone());
        Ok(())
    }

    /// Last recorded iteration, if any.
    pub fn horizon(&self) -> Option<usize> {
        self.steps.keys().next_back().copied()
    }

    /// Arrivals at `iteration`; links without a record are zero. Iterations
    /// past the end of the trace are an error.
    pub fn at(&self, iteration: usize) -> Result<DVector<f64>> {
        match self.horizon() {
            Some(h) if iteration <= h => Ok(self
                .steps
                .get(&iteration)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(link_count(self.n)))),
            _ => Err(Error::InvalidArgument(format!("demand trace has no data for iteration {iteration}"))),
        }
    }

    pub fn records(&self) -> Vec<DemandRecord> {
        let links = super::network::links(self.n);
        let mut out = Vec::new();
        for (&iteration, d) in &self.steps {
            for (k, &(origin, dest)) in links.iter().enumerate() {
                if d[k] != 0.0 {
                    out.push(DemandRecord { iteration, origin, dest, count: d[k] });
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(DEMAND_HEADER)?;
        for r in self.records() {
            w.write_record([r.iteration.to_string(), r.origin.to_string(), r.dest.to_string(), r.count.to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    /// Reads `(iteration, origin, dest, count)` rows; repeated links add up.
    pub fn read_csv<R: Read>(input: R, n: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(|h| h.trim().to_owned()).collect();
        if header != DEMAND_HEADER {
            return Err(Error::Csv(format!("unexpected demand header {header:?}")));
        }
        let mut trace = DemandTrace::new(n);
        for (line, row) in rd.records().enumerate() {
            let row = row?;
            let bad = |what: &str| Error::Csv(format!("demand row {}: bad {what}", line + 1));
            let iteration: usize = row[0].trim().parse().map_err(|_| bad("iteration"))?;
            let origin: usize = row[1].trim().parse().map_err(|_| bad("origin"))?;
            let dest: usize = row[2].trim().parse().map_err(|_| bad("dest"))?;
            let count: f64 = row[3].trim().parse().map_err(|_| bad("count"))?;
            if !(count.is_finite() && count >= 0.0) {
                return Err(bad("count"));
            }
            let k = link_index(n, origin, dest).ok_or_else(|| bad("link"))?;
            let entry = trace.steps.entry(iteration).or_insert_with(|| DVector::zeros(link_count(n)));
            entry[k] += count;
        }
        Ok(trace)
    }
}

/// Where customer arrivals come from during a simulation.
#[derive(Debug, Clone)]
pub enum DemandSource {
    Poisson(PoissonDemand),
    Replay(DemandTrace),
}

impl DemandSource {
    pub fn next(&mut self, iteration: usize) -> Result<DVector<f64>> {
        match self {
            DemandSource::Poisson(p) => Ok(p.sample()),
            DemandSource::Replay(t) => t.at(iteration),
        }
    }

    pub fn set_rates(&mut self, rates: &DVector<f64>) -> Result<()> {
        match self {
            DemandSource::Poisson(p) => p.set_rates(rates.clone()),
            DemandSource::Replay(_) => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn zero_rate_is_zero() {
        let mut d = PoissonDemand::new(dvector![0.0, 0.0], 1).unwrap();
        for _ in 0..100 {
            assert_eq!(d.sample(), dvector![0.0, 0.0]);
        }
    }

    #[test]
    fn moments_at_rate_four() {
        let mut d = PoissonDemand::new(dvector![4.0], 9).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| d.sample()[0]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((3.94..=4.06).contains(&mean), "mean {mean}");
        assert!((3.8..=4.2).contains(&var), "variance {var}");
    }

    #[test]
    fn large_rates_use_normal_branch() {
        let mut d = PoissonDemand::new(dvector![100.0], 3).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|_| d.sample()[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 100.0).abs() < 0.5);
        assert!(xs.iter().all(|x| x.fract() == 0.0 && *x >= 0.0));
    }

    #[test]
    fn seeded_streams_repeat() {
        let mut a = PoissonDemand::new(dvector![2.0, 7.5, 40.0], 5).unwrap();
        let mut b = PoissonDemand::new(dvector![2.0, 7.5, 40.0], 5).unwrap();
        for _ in 0..50 {
            assert_eq!(a.sample(), b.sample());
        }
    }

    #[test]
    fn trace_round_trip() {
        let mut t = DemandTrace::new(3);
        t.push(0, &dvector![1.0, 0.0, 2.0, 0.0, 0.0, 3.0]).unwrap();
        t.push(2, &dvector![0.0, 4.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = DemandTrace::read_csv(buf.as_slice(), 3).unwrap();
        assert_eq!(back.at(0).unwrap(), t.at(0).unwrap());
        assert_eq!(back.at(1).unwrap(), DVector::zeros(6));
        assert_eq!(back.at(2).unwrap(), t.at(2).unwrap());
        assert!(back.at(3).is_err());
    }

    #[test]
    fn trace_rejects_self_links() {
        let csv = "iteration,origin,dest,count\n0,1,1,2\n";
        assert!(DemandTrace::read_csv(csv.as_bytes(), 3).is_err());
    }
}
