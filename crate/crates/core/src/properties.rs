//! Seeded randomized checks of the CS / GCS invariants.
//!
//! Each property draws its own inputs from a ChaCha stream derived from the
//! suite seed, so a single failing property can be replayed in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::divergence::{cs_divergence, gcs_divergence, gcs_divergence_unnormalized, holder_check};
use crate::error::Result;

pub const ABS_TOL: f64 = 1e-12;
pub const SCALE_REL_TOL: f64 = 1e-9;
pub const PERTURBATION: f64 = 0.01;
pub const MIN_PERTURBED_VALUE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyConfig {
    pub trials: usize,
    pub seed: u64,
    /// Test hook: negate every GCS value the suite sees. The suite must
    /// then report failures.
    pub flip_gcs_sign: bool,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        Self { trials: 1000, seed: 0, flip_gcs_sign: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest observed violation measure (property specific, 0 when clean).
    pub worst: f64,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertySummary {
    pub outcomes: Vec<PropertyOutcome>,
}

impl PropertySummary {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(PropertyOutcome::passed)
    }

    pub fn failed_count(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.passed()).count()
    }
}

struct Tally {
    name: &'static str,
    trials: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self { name, trials: 0, failures: 0, worst: 0.0 }
    }

    /// Records one check; `excess` > 0 (or NaN) means the check failed by
    /// that much.
    fn record(&mut self, excess: f64) {
        if !(excess <= 0.0) {
            self.failures += 1;
            self.worst = if excess.is_nan() { f64::NAN } else { self.worst.max(excess) };
        }
    }

    fn done(self) -> PropertyOutcome {
        PropertyOutcome { name: self.name, trials: self.trials, failures: self.failures, worst: self.worst }
    }
}

/// PMF of length `k` drawn uniformly from the probability simplex
/// (normalized unit exponentials, i.e. a flat Dirichlet).
pub fn random_pmf<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

struct Gcs {
    flip: bool,
}

impl Gcs {
    fn value(&self, pmfs: &[&[f64]]) -> Result<f64> {
        let v = gcs_divergence(pmfs)?.value;
        Ok(if self.flip { -v } else { v })
    }

    fn unnormalized(&self, seqs: &[&[f64]]) -> Result<f64> {
        let v = gcs_divergence_unnormalized(seqs)?.value;
        Ok(if self.flip { -v } else { v })
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

/// Every permutation of `0..m` (Heap's algorithm).
fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k % 2 == 0 { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(m, &mut (0..m).collect(), &mut out);
    out
}

/// Values ≥ 0 and identical inputs give 0. `M ∈ {2..5}`, `K ∈ {2..64}`.
pub fn check_non_negativity(trials: usize, seed: u64, flip_gcs_sign: bool) -> Result<PropertyOutcome> {
    let gcs = Gcs { flip: flip_gcs_sign };
    let mut rng = rng_for(seed, 1);
    let mut t = Tally::new("non_negativity");
    for _ in 0..trials {
        t.trials += 1;
        let m = rng.random_range(2..=5);
        let k = rng.random_range(2..=64);
        let tuple: Vec<Vec<f64>> = (0..m).map(|_| random_pmf(&mut rng, k)).collect();
        t.record(-ABS_TOL - gcs.value(&refs(&tuple))?);
        t.record(-ABS_TOL - cs_divergence(&tuple[0], &tuple[1])?.value);

        let p = random_pmf(&mut rng, k);
        t.record(gcs.value(&refs(&vec![p.clone(); m]))?.abs() - ABS_TOL);
        t.record(cs_divergence(&p, &p)?.value.abs() - ABS_TOL);
    }
    Ok(t.done())
}

/// A tuple of `M` copies of one PMF, with a uniformly chosen copy bumped by
/// +0.01 on a uniformly chosen coordinate and renormalized, must score above
/// 1e-6 under GCS, and the CS of the bumped pair as well.
///
/// This fails on a few percent of draws: when the bumped coordinate carries
/// little of the `M`-th power mass (a near-degenerate PMF, or a small entry
/// with `M` ≥ 4) the divergence is of order `0.01^M` rather than `0.01^2`.
pub fn check_perturbation_sensitivity(trials: usize, seed: u64, flip_gcs_sign: bool) -> Result<PropertyOutcome> {
    let gcs = Gcs { flip: flip_gcs_sign };
    let mut rng = rng_for(seed, 7);
    let mut t = Tally::new("perturbation_sensitivity");
    for _ in 0..trials {
        t.trials += 1;
        let m = rng.random_range(2..=5);
        let k = rng.random_range(2..=64);
        let p = random_pmf(&mut rng, k);
        let mut bumped = p.clone();
        bumped[rng.random_range(0..k)] += PERTURBATION;
        let total: f64 = bumped.iter().sum();
        bumped.iter_mut().for_each(|v| *v /= total);
        let mut tuple = vec![p.clone(); m];
        tuple[rng.random_range(0..m)] = bumped.clone();
        let g = gcs.value(&refs(&tuple))?;
        let c = cs_divergence(&p, &bumped)?.value;
        // one failure per trial, however many of the two values fall short
        t.record(MIN_PERTURBED_VALUE - g.min(c));
    }
    Ok(t.done())
}

/// GCS unchanged under every permutation of `M ∈ {3..5}` inputs; CS
/// symmetric in its two arguments.
pub fn check_symmetry(trials: usize, seed: u64, flip_gcs_sign: bool) -> Result<PropertyOutcome> {
    let gcs = Gcs { flip: flip_gcs_sign };
    let mut rng = rng_for(seed, 2);
    let mut t = Tally::new("symmetry");
    let perms: Vec<Vec<Vec<usize>>> = (0..=5).map(permutations).collect();
    for _ in 0..trials {
        t.trials += 1;
        let m = rng.random_range(3..=5);
        let k = rng.random_range(2..=64);
        let tuple: Vec<Vec<f64>> = (0..m).map(|_| random_pmf(&mut rng, k)).collect();
        let base = gcs.value(&refs(&tuple))?;
        for perm in &perms[m] {
            let permuted: Vec<&[f64]> = perm.iter().map(|&i| tuple[i].as_slice()).collect();
            t.record((gcs.value(&permuted)? - base).abs() - ABS_TOL);
        }
        let ab = cs_divergence(&tuple[0], &tuple[1])?.value;
        let ba = cs_divergence(&tuple[1], &tuple[0])?.value;
        t.record((ab - ba).abs() - ABS_TOL);
    }
    Ok(t.done())
}

/// Multiplying each input by a positive scalar drawn log-uniformly from
/// `[1e-3, 1e3]` leaves the unnormalized GCS value unchanged (relative).
pub fn check_scale_invariance(trials: usize, seed: u64, flip_gcs_sign: bool) -> Result<PropertyOutcome> {
    let gcs = Gcs { flip: flip_gcs_sign };
    let mut rng = rng_for(seed, 3);
    let mut t = Tally::new("scale_invariance");
    for _ in 0..trials {
        t.trials += 1;
        let m = rng.random_range(2..=5);
        let k = rng.random_range(2..=64);
        let tuple: Vec<Vec<f64>> = (0..m).map(|_| random_pmf(&mut rng, k)).collect();
        let scaled: Vec<Vec<f64>> = tuple
            .iter()
            .map(|p| {
                let c = 10f64.powf(rng.random_range(-3.0..=3.0));
                p.iter().map(|v| v * c).collect()
            })
            .collect();
        let a = gcs.unnormalized(&refs(&tuple))?;
        let b = gcs.unnormalized(&refs(&scaled))?;
        let rel = (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
        t.record(rel - SCALE_REL_TOL);
    }
    Ok(t.done())
}

/// Two-input GCS equals CS.
pub fn check_two_input_reduction(trials: usize, seed: u64, flip_gcs_sign: bool) -> Result<PropertyOutcome> {
    let gcs = Gcs { flip: flip_gcs_sign };
    let mut rng = rng_for(seed, 4);
    let mut t = Tally::new("two_input_reduction");
    for _ in 0..trials {
        t.trials += 1;
        let k = rng.random_range(2..=64);
        let p = random_pmf(&mut rng, k);
        let q = random_pmf(&mut rng, k);
        t.record((gcs.value(&[&p, &q])? - cs_divergence(&p, &q)?.value).abs() - ABS_TOL);
    }
    Ok(t.done())
}

/// `Σp² ≥ 1/K` and `Σp^M ≥ 1/K^(M-1)`, with equality at the uniform PMF.
pub fn check_power_sum_bounds(trials: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 5);
    let mut t = Tally::new("power_sum_bounds");
    for _ in 0..trials {
        t.trials += 1;
        let k = rng.random_range(2..=64);
        let m = rng.random_range(2..=5);
        let p = random_pmf(&mut rng, k);
        let kf = k as f64;
        let sq: f64 = p.iter().map(|v| v * v).sum();
        t.record(1.0 / kf - ABS_TOL - sq);
        let pm: f64 = p.iter().map(|v| v.powi(m)).sum();
        let bound = kf.powi(1 - m as i32);
        t.record(bound - ABS_TOL - pm);

        let u = vec![1.0 / kf; k];
        t.record((u.iter().map(|v| v * v).sum::<f64>() - 1.0 / kf).abs() - ABS_TOL);
        t.record((u.iter().map(|v| v.powi(m)).sum::<f64>() - bound).abs() - ABS_TOL);
    }
    Ok(t.done())
}

/// Hölder's inequality on random non-negative sequences (including zeros
/// and unnormalized magnitudes).
pub fn check_holder(trials: usize, seed: u64) -> Result<PropertyOutcome> {
    let mut rng = rng_for(seed, 6);
    let mut t = Tally::new("holder");
    for _ in 0..trials {
        t.trials += 1;
        let m = rng.random_range(2..=5);
        let k = rng.random_range(1..=64);
        let seqs: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let scale = 10f64.powf(rng.random_range(-2.0..=2.0));
                (0..k).map(|_| if rng.random_bool(0.1) { 0.0 } else { scale * rng.random::<f64>() }).collect()
            })
            .collect();
        let h = holder_check(&refs(&seqs))?;
        t.record(if h.holds { 0.0 } else { h.lhs - h.rhs });
    }
    Ok(t.done())
}

/// Runs every property with `cfg.trials` trials each.
pub fn run_property_suite(cfg: &PropertyConfig) -> Result<PropertySummary> {
    let (n, s, f) = (cfg.trials, cfg.seed, cfg.flip_gcs_sign);
    Ok(PropertySummary {
        outcomes: vec![
            check_non_negativity(n, s, f)?,
            check_perturbation_sensitivity(n, s, f)?,
            check_symmetry(n, s, f)?,
            check_scale_invariance(n, s, f)?,
            check_two_input_reduction(n, s, f)?,
            check_power_sum_bounds(n, s)?,
            check_holder(n, s)?,
        ],
    })
}
