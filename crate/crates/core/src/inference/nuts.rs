use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::draws::{ChainStats, PosteriorDraws};
use super::LogDensity;
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    /// Step-size and metric adaptation during warmup.
    pub adapt: bool,
    pub adapt_mass: bool,
    /// Energy error (nats) beyond which a transition is flagged divergent.
    pub max_energy_error: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 500,
            draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
            adapt: true,
            adapt_mass: true,
            max_energy_error: 1000.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("sampler: {m}")));
        if self.chains == 0 {
            return bad("chains must be at least 1".into());
        }
        if self.adapt && self.warmup < 100 {
            return bad(format!(
                "warmup must be >= 100 with adaptation, got {}",
                self.warmup
            ));
        }
        if self.draws == 0 {
            return bad("draws must be positive".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!(
                "target_accept must be in (0, 1), got {}",
                self.target_accept
            ));
        }
        if self.max_tree_depth == 0 {
            return bad("max_tree_depth must be positive".into());
        }
        Ok(())
    }
}

/// Position, momentum and cached density/gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>, p: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_grad(&q, &mut grad);
        PhasePoint { q, p, grad, logp }
    }

    /// `-log p(q) + p' M^{-1} p / 2` with diagonal inverse metric `inv_mass`.
    pub fn energy(&self, inv_mass: &[f64]) -> f64 {
        let kinetic: f64 = self.p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum();
        let h = -self.logp + 0.5 * kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    /// One leapfrog step of size `eps` (negative to integrate backwards).
    pub fn leapfrog<T: LogDensity + ?Sized>(&mut self, target: &T, eps: f64, inv_mass: &[f64]) {
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in self.q.iter_mut().zip(&self.p).zip(inv_mass) {
            *q += eps * m * p;
        }
        self.logp = target.logp_grad(&self.q, &mut self.grad);
        for (p, g) in self.p.iter_mut().zip(&self.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

fn sharp(p: &[f64], inv_mass: &[f64]) -> Vec<f64> {
    p.iter().zip(inv_mass).map(|(p, m)| p * m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Generalized no-U-turn check: the trajectory keeps going while both end
/// velocities point along the summed momentum.
fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn draw_momentum(rng: &mut ChaCha8Rng, inv_mass: &[f64]) -> Vec<f64> {
    inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub divergent: bool,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub energy: f64,
}

struct Transition<'a, T: ?Sized> {
    target: &'a T,
    inv_mass: &'a [f64],
    eps: f64,
    h0: f64,
    max_energy_error: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<T: LogDensity + ?Sized> Transition<'_, T> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        rng: &mut ChaCha8Rng,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        sign: f64,
        log_sum_weight: &mut f64,
    ) -> bool {
        if depth == 0 {
            z.leapfrog(self.target, sign * self.eps, self.inv_mass);
            self.n_leapfrog += 1;
            let h = z.energy(self.inv_mass);
            if h - self.h0 > self.max_energy_error {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 {
                1.0
            } else {
                (self.h0 - h).exp()
            };
            z_propose.clone_from(z);
            *p_sharp_beg = sharp(&z.p, self.inv_mass);
            p_sharp_end.clone_from(p_sharp_beg);
            add_assign(rho, &z.p);
            p_beg.clone_from(&z.p);
            p_end.clone_from(&z.p);
            return !self.divergent;
        }

        let dim = z.q.len();
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        if !self.build_tree(
            rng,
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            &mut log_sum_weight_init,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        if !self.build_tree(
            rng,
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            &mut log_sum_weight_final,
        ) {
            return false;
        }

        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree
            || rng.random::<f64>() < (log_sum_weight_final - log_sum_weight_subtree).exp()
        {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        add_assign(rho, &rho_subtree);
        let mut persist = no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree);
        persist &= no_u_turn(
            p_sharp_beg,
            &p_sharp_final_beg,
            &add(&rho_init, &p_final_beg),
        );
        persist &= no_u_turn(
            &p_sharp_init_end,
            p_sharp_end,
            &add(&rho_final, &p_init_end),
        );
        persist
    }
}

/// One multinomial NUTS transition from `q0`.
pub fn nuts_transition<T: LogDensity + ?Sized>(
    target: &T,
    q0: &PhasePoint,
    eps: f64,
    inv_mass: &[f64],
    max_depth: usize,
    max_energy_error: f64,
    rng: &mut ChaCha8Rng,
) -> (PhasePoint, TransitionStats) {
    let mut z0 = q0.clone();
    z0.p = draw_momentum(rng, inv_mass);
    let h0 = z0.energy(inv_mass);

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut z_sample = z0.clone();
    let mut z_propose = z0.clone();

    let p0_sharp = sharp(&z0.p, inv_mass);
    let (mut p_fwd_fwd, mut p_fwd_bck, mut p_bck_fwd, mut p_bck_bck) =
        (z0.p.clone(), z0.p.clone(), z0.p.clone(), z0.p.clone());
    let (mut ps_fwd_fwd, mut ps_fwd_bck, mut ps_bck_fwd, mut ps_bck_bck) = (
        p0_sharp.clone(),
        p0_sharp.clone(),
        p0_sharp.clone(),
        p0_sharp,
    );
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;

    let mut tr = Transition {
        target,
        inv_mass,
        eps,
        h0,
        max_energy_error,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let dim = z0.q.len();
    let mut depth = 0;
    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut log_sum_weight_subtree = f64::NEG_INFINITY;
        let valid = if rng.random::<f64>() > 0.5 {
            // The existing tree becomes the backward part.
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_fwd);
            ps_bck_fwd.clone_from(&ps_fwd_fwd);
            tr.build_tree(
                rng,
                depth,
                &mut z_fwd,
                &mut z_propose,
                &mut ps_fwd_bck,
                &mut ps_fwd_fwd,
                &mut rho_fwd,
                &mut p_fwd_bck,
                &mut p_fwd_fwd,
                1.0,
                &mut log_sum_weight_subtree,
            )
        } else {
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_bck);
            ps_fwd_bck.clone_from(&ps_bck_bck);
            tr.build_tree(
                rng,
                depth,
                &mut z_bck,
                &mut z_propose,
                &mut ps_bck_fwd,
                &mut ps_bck_bck,
                &mut rho_bck,
                &mut p_bck_fwd,
                &mut p_bck_bck,
                -1.0,
                &mut log_sum_weight_subtree,
            )
        };
        if !valid {
            break;
        }
        depth += 1;

        if log_sum_weight_subtree > log_sum_weight
            || rng.random::<f64>() < (log_sum_weight_subtree - log_sum_weight).exp()
        {
            z_sample.clone_from(&z_propose);
        }
        log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&ps_bck_bck, &ps_fwd_fwd, &rho);
        persist &= no_u_turn(&ps_bck_bck, &ps_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&ps_bck_fwd, &ps_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }

    let stats = TransitionStats {
        accept_stat: if tr.n_leapfrog > 0 {
            tr.sum_metro_prob / tr.n_leapfrog as f64
        } else {
            0.0
        },
        divergent: tr.divergent,
        depth,
        n_leapfrog: tr.n_leapfrog,
        energy: z_sample.energy(inv_mass),
    };
    (z_sample, stats)
}

/// Doubles or halves the step size until a single leapfrog step crosses an
/// acceptance probability of 0.8.
fn find_reasonable_step_size<T: LogDensity + ?Sized>(
    target: &T,
    start: &PhasePoint,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let threshold = 0.8f64.ln();
    let mut eps = 1.0;
    let trial = |eps: f64, rng: &mut ChaCha8Rng| {
        let mut z = start.clone();
        z.p = draw_momentum(rng, inv_mass);
        let h0 = z.energy(inv_mass);
        z.leapfrog(target, eps, inv_mass);
        h0 - z.energy(inv_mass)
    };
    let direction = if trial(eps, rng) > threshold { 1 } else { -1 };
    for _ in 0..100 {
        let delta = trial(eps, rng);
        if (direction == 1 && !(delta > threshold)) || (direction == -1 && !(delta < threshold)) {
            break;
        }
        eps = if direction == 1 { eps * 2.0 } else { eps * 0.5 };
        if !(1e-10..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e7)
}

/// Dual averaging of the log step size toward a target acceptance statistic.
#[derive(Debug, Clone)]
pub struct DualAverage {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
}

impl DualAverage {
    /// Shrinkage `gamma` is 0.2 rather than the customary 0.05: with 0.05 the
    /// log step size fluctuates enough that the averaged step lands well below
    /// the target and realized acceptance overshoots to about 0.9.
    pub fn new(initial_step: f64) -> Self {
        DualAverage {
            mu: (10.0 * initial_step).ln(),
            s_bar: 0.0,
            x_bar: 0.0,
            counter: 0.0,
            gamma: 0.2,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    /// Feeds one acceptance statistic; returns the next step size.
    pub fn update(&mut self, accept_stat: f64, target: f64) -> f64 {
        self.counter += 1.0;
        let stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (target - stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let w = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean/variance (Welford).
#[derive(Debug, Clone)]
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / self.n;
            *s += delta * (v - *m);
        }
    }

    /// Sample variance shrunk toward 1e-3, as Stan does for its diagonal metric.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

struct ChainOutput {
    draws: Vec<f64>,
    stats: ChainStats,
}

/// Warmup iterations `[start, end)` whose positions estimate the metric.
fn metric_window(warmup: usize) -> (usize, usize) {
    let terminal = (warmup / 10).max(25).min(warmup / 4);
    (warmup / 2, warmup - terminal)
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);

    let q0 = target.initial_point(&mut rng);
    if q0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: q0.len(),
        });
    }
    let mut z = PhasePoint::new(target, q0, vec![0.0; dim]);
    if !z.logp.is_finite() || z.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Sampler(format!(
            "chain {chain}: log density is not finite at the initial point"
        )));
    }

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_reasonable_step_size(target, &z, &inv_mass, &mut rng);
    let mut da = DualAverage::new(eps);
    let (win_start, win_end) = metric_window(cfg.warmup);
    let mut welford = Welford::new(dim);

    let mut draws = Vec::with_capacity(cfg.draws * dim);
    let mut stats = ChainStats::default();
    for it in 0..cfg.warmup + cfg.draws {
        let (next, st) = nuts_transition(
            target,
            &z,
            eps,
            &inv_mass,
            cfg.max_tree_depth,
            cfg.max_energy_error,
            &mut rng,
        );
        z = next;
        if it < cfg.warmup {
            if cfg.adapt {
                eps = da.update(st.accept_stat, cfg.target_accept);
                if cfg.adapt_mass && (win_start..win_end).contains(&it) {
                    welford.push(&z.q);
                    if it + 1 == win_end && welford.n >= 10.0 {
                        inv_mass = welford.regularized_variance();
                        eps = find_reasonable_step_size(target, &z, &inv_mass, &mut rng);
                        da = DualAverage::new(eps);
                    }
                }
                if it + 1 == cfg.warmup {
                    eps = da.final_step();
                }
            }
            continue;
        }
        draws.extend(target.constrain(&z.q));
        stats.accept_stat.push(st.accept_stat);
        stats.divergent.push(st.divergent);
        stats.tree_depth.push(st.depth);
        stats.n_leapfrog.push(st.n_leapfrog);
        stats.energy.push(st.energy);
    }
    stats.step_size = eps;
    stats.inv_mass = inv_mass;
    Ok(ChainOutput { draws, stats })
}

/// Runs `cfg.chains` independent NUTS chains and returns post-warmup draws
/// on the constrained scale. Chain `c` uses stream `c` of a ChaCha8 generator
/// seeded with `cfg.seed`, so results do not depend on thread scheduling.
pub fn nuts_sample<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let outputs = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, cfg, c))
        .collect::<Result<Vec<_>>>()?;
    let dim = target.dim();
    let mut samples = Vec::with_capacity(cfg.chains * cfg.draws * dim);
    let mut chain_stats = Vec::with_capacity(cfg.chains);
    for out in outputs {
        samples.extend(out.draws);
        chain_stats.push(out.stats);
    }
    PosteriorDraws::new(
        target.param_names(),
        cfg.chains,
        cfg.draws,
        samples,
        chain_stats,
    )
}
