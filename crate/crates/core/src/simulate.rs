//! Exact simulation of the density-dependent jump process on the `1/N`
//! lattice (direct Gillespie method), extinction-time Monte Carlo and
//! stationary fluctuation statistics.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::ReactionModel;
use crate::rng::{stream_rng, tag, StreamRng};

/// Default censoring horizon for extinction runs.
pub const DEFAULT_T_MAX: f64 = 1e6;

/// 97.5% standard normal quantile.
const Z_975: f64 = 1.959_963_984_540_054;

/// Restarts allowed per replicate in [`stationary_fluctuations`].
const MAX_RESTARTS: u64 = 16;

/// `[N z] / N`, componentwise. A small slack keeps `N * 0.29` style
/// products from rounding down a whole individual.
pub fn lattice_counts(pop_size: u64, z: &[f64]) -> Vec<i64> {
    let n = pop_size as f64;
    z.iter().map(|x| (n * x + 1e-9).floor() as i64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub pop_size: u64,
    /// Lattice-rounded initial proportions.
    pub z0: Vec<f64>,
    pub t_max: f64,
    pub seed: u64,
    pub replicate: u64,
    #[serde(skip)]
    counts0: Vec<i64>,
}

impl SimConfig {
    pub fn new(pop_size: u64, z0: &[f64], t_max: f64, seed: u64, replicate: u64) -> Result<Self> {
        if pop_size == 0 {
            return Err(invalid("pop_size", "must be at least 1"));
        }
        if !(t_max > 0.0) {
            return Err(invalid("t_max", format!("must be > 0, got {t_max}")));
        }
        if z0.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(invalid("z0", format!("{z0:?} has a negative or non-finite entry")));
        }
        let counts0 = lattice_counts(pop_size, z0);
        let n = pop_size as f64;
        Ok(Self {
            pop_size,
            z0: counts0.iter().map(|&c| c as f64 / n).collect(),
            t_max,
            seed,
            replicate,
            counts0,
        })
    }

    pub fn initial_counts(&self) -> &[i64] {
        &self.counts0
    }

    fn check(&self, model: &ReactionModel) -> Result<()> {
        if self.z0.len() != model.dim() {
            return Err(invalid("z0", format!("expected {} components", model.dim())));
        }
        if !model.domain().contains(&self.z0, 0.0) {
            return Err(invalid("z0", format!("{:?} is outside the domain", self.z0)));
        }
        Ok(())
    }
}

/// Why a simulated path stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Horizon,
    /// Total rate reached zero.
    Absorbed,
    /// The state left the admissible domain (population cap).
    LeftDomain,
}

/// One step of the direct method: waiting time and reaction index drawn for
/// rates `N * beta_j(z)`. `None` when every rate vanishes.
#[inline]
pub fn sample_event(rates: &[f64], total: f64, pop_size: f64, rng: &mut StreamRng) -> Option<(f64, usize)> {
    if total <= 0.0 {
        return None;
    }
    let e: f64 = rng.sample(Exp1);
    let wait = e / (pop_size * total);
    let mut u = rng.random::<f64>() * total;
    let mut chosen = rates.len() - 1;
    for (j, &r) in rates.iter().enumerate() {
        if u < r {
            chosen = j;
            break;
        }
        u -= r;
    }
    // u can survive the scan through rounding; never pick a zero-rate channel
    while rates[chosen] <= 0.0 && chosen > 0 {
        chosen -= 1;
    }
    Some((wait, chosen))
}

/// Mutable simulation state: integer counts plus cached proportions.
struct Walker<'m> {
    model: &'m ReactionModel,
    n: f64,
    counts: Vec<i64>,
    z: Vec<f64>,
    rates: Vec<f64>,
    total: f64,
    time: f64,
}

enum Step {
    Fired(usize),
    Stopped(Termination),
}

impl<'m> Walker<'m> {
    fn new(model: &'m ReactionModel, pop_size: u64, counts: &[i64]) -> Self {
        let n = pop_size as f64;
        let z: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let mut rates = vec![0.0; model.num_reactions()];
        let total = model.rates_into(&z, &mut rates);
        Self {
            model,
            n,
            counts: counts.to_vec(),
            z,
            rates,
            total,
            time: 0.0,
        }
    }

    #[inline]
    fn step(&mut self, t_max: f64, rng: &mut StreamRng) -> Step {
        let Some((wait, j)) = sample_event(&self.rates, self.total, self.n, rng) else {
            return Step::Stopped(Termination::Absorbed);
        };
        if self.time + wait > t_max {
            self.time = t_max;
            return Step::Stopped(Termination::Horizon);
        }
        self.time += wait;
        for (i, &h) in self.model.jump(j).iter().enumerate() {
            if h != 0 {
                self.counts[i] += h;
                self.z[i] = self.counts[i] as f64 / self.n;
            }
        }
        if !self.model.domain().contains(&self.z, 0.0) {
            return Step::Stopped(Termination::LeftDomain);
        }
        self.total = self.model.rates_into(&self.z, &mut self.rates);
        Step::Fired(j)
    }
}

/// A realized path of `Z^N`: event times, fired reactions and the integer
/// counts after each event (the state is `counts / N`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpPath {
    pub pop_size: u64,
    pub initial_counts: Vec<i64>,
    pub times: Vec<f64>,
    pub reactions: Vec<usize>,
    pub counts: Vec<Vec<i64>>,
    pub end_time: f64,
    pub termination: Termination,
}

impl JumpPath {
    pub fn num_events(&self) -> usize {
        self.times.len()
    }

    /// Proportions after event `i`.
    pub fn state(&self, i: usize) -> Vec<f64> {
        let n = self.pop_size as f64;
        self.counts[i].iter().map(|&c| c as f64 / n).collect()
    }

    /// Proportions at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.pop_size as f64;
        let idx = self.times.partition_point(|&s| s <= t);
        let c = if idx == 0 {
            &self.initial_counts
        } else {
            &self.counts[idx - 1]
        };
        c.iter().map(|&x| x as f64 / n).collect()
    }
}

/// Simulates one path until `t_max`, absorption or domain exit.
pub fn gillespie_path(model: &ReactionModel, cfg: &SimConfig) -> Result<JumpPath> {
    cfg.check(model)?;
    let mut rng = stream_rng(cfg.seed, tag::EXTINCTION | cfg.replicate);
    let mut w = Walker::new(model, cfg.pop_size, &cfg.counts0);
    let mut path = JumpPath {
        pop_size: cfg.pop_size,
        initial_counts: cfg.counts0.clone(),
        times: Vec::new(),
        reactions: Vec::new(),
        counts: Vec::new(),
        end_time: 0.0,
        termination: Termination::Horizon,
    };
    loop {
        match w.step(cfg.t_max, &mut rng) {
            Step::Fired(j) => {
                path.times.push(w.time);
                path.reactions.push(j);
                path.counts.push(w.counts.clone());
            }
            Step::Stopped(t) => {
                path.termination = t;
                path.end_time = if t == Termination::Horizon { cfg.t_max } else { w.time };
                return Ok(path);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionOutcome {
    pub time: f64,
    pub censored: bool,
}

/// First time the infective count (component 0) hits zero. Censored at
/// `t_max`, or when the path leaves the domain or absorbs with infectives
/// still present.
pub fn extinction_time(model: &ReactionModel, cfg: &SimConfig) -> Result<ExtinctionOutcome> {
    cfg.check(model)?;
    let mut rng = stream_rng(cfg.seed, tag::EXTINCTION | cfg.replicate);
    Ok(run_to_extinction(model, cfg.pop_size, &cfg.counts0, cfg.t_max, &mut rng))
}

fn run_to_extinction(
    model: &ReactionModel,
    pop_size: u64,
    counts0: &[i64],
    t_max: f64,
    rng: &mut StreamRng,
) -> ExtinctionOutcome {
    if counts0[0] == 0 {
        return ExtinctionOutcome {
            time: 0.0,
            censored: false,
        };
    }
    let mut w = Walker::new(model, pop_size, counts0);
    loop {
        match w.step(t_max, rng) {
            Step::Fired(_) if w.counts[0] == 0 => {
                return ExtinctionOutcome {
                    time: w.time,
                    censored: false,
                }
            }
            Step::Fired(_) => {}
            Step::Stopped(t) => {
                return ExtinctionOutcome {
                    time: if t == Termination::Horizon { t_max } else { w.time },
                    censored: true,
                }
            }
        }
    }
}

/// Pairwise (cascade) summation.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Monte Carlo summary of extinction times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionStats {
    pub pop_size: u64,
    pub seed: u64,
    pub replicates: usize,
    pub times: Vec<f64>,
    pub censored: Vec<bool>,
    pub n_censored: usize,
    /// Mean over uncensored replicates.
    pub mean: f64,
    pub log_mean: f64,
    pub std_dev: Option<f64>,
    /// Half-width of the 95% interval for `log_mean` (delta method).
    pub ci_half_width_log: Option<f64>,
    pub ci_defined: bool,
}

impl ExtinctionStats {
    fn from_outcomes(pop_size: u64, seed: u64, outcomes: &[ExtinctionOutcome]) -> Result<Self> {
        let times: Vec<f64> = outcomes.iter().map(|o| o.time).collect();
        let censored: Vec<bool> = outcomes.iter().map(|o| o.censored).collect();
        let done: Vec<f64> = outcomes.iter().filter(|o| !o.censored).map(|o| o.time).collect();
        if done.is_empty() {
            return Err(Error::AllCensored {
                reps: outcomes.len(),
            });
        }
        let n = done.len() as f64;
        let mean = pairwise_sum(&done) / n;
        let (std_dev, ci) = if done.len() >= 2 {
            let sq: Vec<f64> = done.iter().map(|t| (t - mean) * (t - mean)).collect();
            let sd = (pairwise_sum(&sq) / (n - 1.0)).sqrt();
            (Some(sd), Some(Z_975 * sd / (mean * n.sqrt())))
        } else {
            (None, None)
        };
        Ok(Self {
            pop_size,
            seed,
            replicates: outcomes.len(),
            n_censored: censored.iter().filter(|c| **c).count(),
            times,
            censored,
            mean,
            log_mean: mean.ln(),
            std_dev,
            ci_defined: ci.is_some(),
            ci_half_width_log: ci,
        })
    }
}

fn run_in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

/// Runs `reps` independent extinction replicates. Replicate `r` uses stream
/// `r` of `seed`, so results do not depend on `workers` (0 = all cores).
pub fn mc_extinction(
    model: &ReactionModel,
    pop_size: u64,
    z0: &[f64],
    reps: usize,
    t_max: f64,
    seed: u64,
    workers: usize,
) -> Result<ExtinctionStats> {
    if reps == 0 {
        return Err(invalid("reps", "must be at least 1"));
    }
    let cfg = SimConfig::new(pop_size, z0, t_max, seed, 0)?;
    cfg.check(model)?;
    let outcomes: Vec<ExtinctionOutcome> = run_in_pool(workers, || {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(seed, tag::EXTINCTION | r);
                run_to_extinction(model, pop_size, &cfg.counts0, t_max, &mut rng)
            })
            .collect()
    });
    ExtinctionStats::from_outcomes(pop_size, seed, &outcomes)
}

/// Time-averaged statistics of `U = sqrt(N) (Z^N - z*)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationStats {
    pub pop_size: u64,
    pub seed: u64,
    pub replicates: usize,
    pub burn_in: f64,
    pub horizon: f64,
    /// Per-component variance of `U` about its pooled time average.
    pub variance: Vec<f64>,
    /// Pooled time average of `U`.
    pub mean: Vec<f64>,
    /// Standard error of `variance` from the spread across replicates;
    /// `None` with a single replicate.
    pub standard_error: Option<Vec<f64>>,
    /// Number of replicate attempts that went extinct before the horizon.
    pub premature_extinctions: usize,
    /// True when some replicate never completed the horizon; its moments
    /// then cover only the observed stretch.
    pub partial: bool,
}

#[derive(Debug, Clone)]
struct Moments {
    m1: Vec<f64>,
    m2: Vec<f64>,
    extinctions: usize,
    complete: bool,
}

fn fluctuation_replicate(
    model: &ReactionModel,
    pop_size: u64,
    counts0: &[i64],
    z_star: &[f64],
    burn_in: f64,
    horizon: f64,
    seed: u64,
    replicate: u64,
) -> Moments {
    let d = z_star.len();
    let root_n = (pop_size as f64).sqrt();
    let mut extinctions = 0;
    let mut last = None;
    for attempt in 0..MAX_RESTARTS {
        let mut rng = stream_rng(seed, tag::FLUCTUATIONS | (attempt << 32) | replicate);
        let mut w = Walker::new(model, pop_size, counts0);
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        let mut covered = 0.0;
        let mut extinct = false;
        loop {
            let before = w.time;
            let z_before = w.z.clone();
            let step = w.step(horizon, &mut rng);
            let lo = before.max(burn_in);
            let hi = w.time.min(horizon);
            if hi > lo {
                let dt = hi - lo;
                covered += dt;
                for i in 0..d {
                    let u = root_n * (z_before[i] - z_star[i]);
                    s1[i] += u * dt;
                    s2[i] += u * u * dt;
                }
            }
            match step {
                Step::Fired(_) if w.counts[0] == 0 => {
                    extinct = true;
                    break;
                }
                Step::Fired(_) => {}
                Step::Stopped(Termination::Horizon) => break,
                Step::Stopped(_) => {
                    extinct = true;
                    break;
                }
            }
        }
        let moments = if covered > 0.0 {
            Moments {
                m1: s1.iter().map(|s| s / covered).collect(),
                m2: s2.iter().map(|s| s / covered).collect(),
                extinctions,
                complete: !extinct,
            }
        } else {
            Moments {
                m1: vec![f64::NAN; d],
                m2: vec![f64::NAN; d],
                extinctions,
                complete: false,
            }
        };
        if !extinct {
            return moments;
        }
        extinctions += 1;
        last = Some(Moments {
            extinctions,
            ..moments
        });
    }
    last.expect("at least one attempt")
}

/// Long-run variance of `sqrt(N)(Z^N - z*)` over `[burn_in, horizon]`,
/// pooled across `reps` independent paths started at the lattice point
/// nearest `z*`. A path that goes extinct is restarted on a fresh stream
/// and the event is counted.
#[allow(clippy::too_many_arguments)]
pub fn stationary_fluctuations(
    model: &ReactionModel,
    pop_size: u64,
    burn_in: f64,
    horizon: f64,
    seed: u64,
    reps: usize,
    workers: usize,
) -> Result<FluctuationStats> {
    if !(burn_in >= 0.0 && horizon > burn_in) {
        return Err(invalid("horizon", format!("need 0 <= burn_in < horizon, got {burn_in}, {horizon}")));
    }
    if reps == 0 {
        return Err(invalid("reps", "must be at least 1"));
    }
    let z_star = model.stable_equilibrium()?;
    let counts0 = lattice_counts(pop_size, &z_star);
    if counts0[0] == 0 {
        return Err(invalid("pop_size", "the endemic state has no infectives at this size"));
    }
    let runs: Vec<Moments> = run_in_pool(workers, || {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| fluctuation_replicate(model, pop_size, &counts0, &z_star, burn_in, horizon, seed, r))
            .collect()
    });
    let usable: Vec<&Moments> = runs.iter().filter(|m| m.m1[0].is_finite()).collect();
    let d = z_star.len();
    let k = usable.len() as f64;
    let pooled = |f: &dyn Fn(&Moments) -> f64| -> f64 {
        let xs: Vec<f64> = usable.iter().map(|m| f(m)).collect();
        pairwise_sum(&xs) / k
    };
    let mean: Vec<f64> = (0..d).map(|i| pooled(&|m: &Moments| m.m1[i])).collect();
    let variance: Vec<f64> = (0..d)
        .map(|i| pooled(&|m: &Moments| m.m2[i]) - mean[i] * mean[i])
        .collect();
    let standard_error = (usable.len() >= 2).then(|| {
        (0..d)
            .map(|i| {
                let per: Vec<f64> = usable
                    .iter()
                    .map(|m| m.m2[i] - mean[i] * mean[i])
                    .collect();
                let avg = pairwise_sum(&per) / k;
                let sq: Vec<f64> = per.iter().map(|v| (v - avg) * (v - avg)).collect();
                (pairwise_sum(&sq) / (k - 1.0) / k).sqrt()
            })
            .collect()
    });
    Ok(FluctuationStats {
        pop_size,
        seed,
        replicates: reps,
        burn_in,
        horizon,
        variance,
        mean,
        standard_error,
        premature_extinctions: runs.iter().map(|m| m.extinctions).sum(),
        partial: runs.iter().any(|m| !m.complete),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Domain, ModelKind, ModelParams, Rate, Reaction};

    fn sis(l: f64, g: f64) -> ReactionModel {
        build_model(ModelKind::Sis, ModelParams::sis(l, g)).unwrap()
    }

    fn pure_recovery(gamma: f64) -> ReactionModel {
        ReactionModel::new(
            1,
            vec![
                Reaction::new("infection", vec![1], Rate::constant(0.0)),
                Reaction::new("recovery", vec![-1], Rate::product(gamma, vec![crate::model::Affine::coordinate(1, 0)])),
            ],
            Domain::UnitInterval,
        )
        .unwrap()
    }

    #[test]
    fn lattice_rounding() {
        let cfg = SimConfig::new(100, &[0.29, 0.555], 1.0, 0, 0).unwrap();
        assert_eq!(cfg.initial_counts(), &[29, 55]);
        assert_eq!(cfg.z0, vec![0.29, 0.55]);
        assert!(SimConfig::new(0, &[0.5], 1.0, 0, 0).is_err());
        assert!(SimConfig::new(10, &[0.5], 0.0, 0, 0).is_err());
    }

    #[test]
    fn absorbing_start_has_no_events() {
        let cfg = SimConfig::new(100, &[0.0], 10.0, 1, 0).unwrap();
        let p = gillespie_path(&sis(2.0, 1.0), &cfg).unwrap();
        assert_eq!(p.num_events(), 0);
        assert_eq!(p.termination, Termination::Absorbed);
    }

    #[test]
    fn pure_death_takes_exactly_fifty_recoveries() {
        let cfg = SimConfig::new(100, &[0.5], 1e9, 5, 0).unwrap();
        let p = gillespie_path(&pure_recovery(1.0), &cfg).unwrap();
        assert_eq!(p.num_events(), 50);
        assert!(p.reactions.iter().all(|&j| j == 1));
        assert_eq!(p.counts.last().unwrap(), &vec![0]);
        assert_eq!(p.termination, Termination::Absorbed);
    }

    #[test]
    fn path_states_follow_jumps() {
        let m = build_model(ModelKind::Sirs, ModelParams::sirs(2.0, 1.0, 1.0)).unwrap();
        let cfg = SimConfig::new(50, &[0.2, 0.6], 20.0, 9, 3).unwrap();
        let p = gillespie_path(&m, &cfg).unwrap();
        let mut prev = p.initial_counts.clone();
        for (c, &j) in p.counts.iter().zip(&p.reactions) {
            let expect: Vec<i64> = prev.iter().zip(m.jump(j)).map(|(a, h)| a + h).collect();
            assert_eq!(c, &expect);
            assert!(c.iter().all(|&x| x >= 0) && c.iter().sum::<i64>() <= 50);
            prev = c.clone();
        }
        assert!(p.times.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(gillespie_path(&m, &cfg).unwrap(), p);
    }

    #[test]
    fn already_extinct() {
        let cfg = SimConfig::new(100, &[0.0], 10.0, 1, 0).unwrap();
        let o = extinction_time(&sis(2.0, 1.0), &cfg).unwrap();
        assert_eq!(o, ExtinctionOutcome { time: 0.0, censored: false });
    }

    #[test]
    fn censoring_and_all_censored_error() {
        let err = mc_extinction(&sis(3.0, 1.0), 200, &[2.0 / 3.0], 3, 1.0, 1, 1).unwrap_err();
        assert_eq!(err, Error::AllCensored { reps: 3 });
    }

    #[test]
    fn single_replicate_has_no_ci() {
        let s = mc_extinction(&sis(1.5, 1.0), 10, &[1.0 / 3.0], 1, 1e6, 3, 1).unwrap();
        assert_eq!(s.replicates, 1);
        assert!(!s.ci_defined);
        assert!(s.ci_half_width_log.is_none());
    }

    #[test]
    fn sis_small_population_goes_extinct() {
        let cfg = SimConfig::new(40, &[1.0 / 3.0], 1e6, 11, 0).unwrap();
        let o = extinction_time(&sis(1.5, 1.0), &cfg).unwrap();
        assert!(!o.censored && o.time > 0.0);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), xs.iter().sum::<f64>());
    }
}
