//! The full Gibbs sweep: tree-structure Metropolis steps against partial
//! residuals, conjugate leaf and variance draws, and (in measurement-error
//! mode) the latent-predictor Metropolis sweep. Binary responses run the
//! probit-augmented variant of the same loop with the error variance fixed
//! at one.
//!
//! One chain is strictly sequential; chains run in parallel on seed-derived
//! RNG streams, so results are identical for a fixed seed regardless of
//! thread count.

mod diagnostics;
mod probit;

pub use diagnostics::{diagnostics, ess, split_rhat, AcceptanceSummary, DiagnosticsReport};
pub use probit::draw_probit_latent;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservedDataset;
use crate::ensemble::{
    accumulate_ensemble_sorted_1d, leaf_core, propose_move, CutpointGrid, NodeAssignment, Tree,
    TreeMove,
};
use crate::error::{Error, Result};
use crate::latent::{latent_sweep, LatentState};
use crate::priors::{
    log_structure_prior_grow_delta, sample_leaf_values, sample_sigma2, HyperParams, YScaler,
};
use crate::stats::normal_cdf;

/// Minimum observations per leaf a grow proposal must leave behind.
const N_MIN: u32 = 1;
/// Cadence of the full bookkeeping audit when debug assertions are on.
const CHECK_EVERY_DEFAULT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Continuous,
    Probit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bart,
    Mebart,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bart => "bart",
            Method::Mebart => "mebart",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: Mode,
    pub method: Method,
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Record the latent predictor matrix at every kept draw.
    pub keep_latent: bool,
    /// Snapshot the tree ensemble at every kept draw (needed to predict at
    /// new inputs from a persisted fit).
    pub store_ensembles: bool,
    /// Explicit audit cadence; 0 means "every 50 sweeps in debug builds,
    /// never in release".
    pub check_every: usize,
}

impl SamplerConfig {
    pub fn new(mode: Mode, method: Method, seed: u64) -> Self {
        SamplerConfig {
            mode,
            method,
            n_burn: 200,
            n_keep: 1000,
            thin: 1,
            n_chains: 1,
            seed,
            keep_latent: method == Method::Mebart,
            store_ensembles: false,
            check_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_keep < 1 {
            return Err(Error::Config("n_keep must be at least 1".into()));
        }
        if self.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_chains < 1 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_sweeps(&self) -> usize {
        self.n_burn + self.n_keep * self.thin
    }
}

/// Extra input matrices at which per-draw (or running-mean) function values
/// are recorded during the run.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub name: String,
    /// Points, one row per evaluation input.
    pub points: Array2<f64>,
    /// Record every kept draw (true) or only the running mean (false).
    pub per_draw: bool,
}

#[derive(Debug, Clone)]
pub struct EvalTrace {
    pub name: String,
    /// n_draws x n_points when requested per draw.
    pub per_draw: Option<Array2<f64>>,
    /// Posterior mean function values at the points.
    pub mean: Vec<f64>,
}

/// Kept tree snapshots, for prediction at new inputs.
#[derive(Debug, Clone)]
pub struct EnsembleDraws {
    /// Per kept draw: the m trees, arenas compacted to preorder.
    pub draws: Vec<Vec<Tree>>,
}

/// Posterior draws from one run (all chains concatenated, chain-major).
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub mode: Mode,
    pub method: Method,
    pub n_chains: usize,
    /// Kept draws per chain.
    pub n_keep: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Error sd per kept draw, in original response units; empty in probit
    /// mode.
    pub sigma: Vec<f64>,
    /// Function values at the training inputs (observed predictors), one row
    /// per kept draw: original units, or probabilities in probit mode.
    pub train_f: Array2<f64>,
    pub evals: Vec<EvalTrace>,
    /// Latent predictor matrix per kept draw (row-major n x p).
    pub latent_x: Option<Vec<Vec<f64>>>,
    /// Per-observation acceptance rates of the latent update, pooled over
    /// chains.
    pub acceptance: Option<Vec<f64>>,
    /// Full sigma trace per chain (every sweep including burn-in), original
    /// units; empty in probit mode.
    pub sigma_trace: Vec<Vec<f64>>,
    pub ensembles: Option<EnsembleDraws>,
    /// Response rescaling used by the fit; `None` in probit mode.
    pub y_scale: Option<YScaler>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.n_chains * self.n_keep
    }

    pub fn eval(&self, name: &str) -> Option<&EvalTrace> {
        self.evals.iter().find(|e| e.name == name)
    }

    /// Column means of the kept train_f draws.
    pub fn train_f_mean(&self) -> Vec<f64> {
        let k = self.train_f.nrows() as f64;
        (0..self.train_f.ncols())
            .map(|j| self.train_f.column(j).sum() / k)
            .collect()
    }

    /// Posterior mean of the latent predictor matrix.
    pub fn latent_posterior_mean(&self, n: usize, p: usize) -> Option<Array2<f64>> {
        let draws = self.latent_x.as_ref()?;
        let mut acc = vec![0.0f64; n * p];
        for d in draws {
            for (a, v) in acc.iter_mut().zip(d) {
                *a += v;
            }
        }
        let k = draws.len() as f64;
        for a in acc.iter_mut() {
            *a /= k;
        }
        Array2::from_shape_vec((n, p), acc).ok()
    }

    /// Per-draw function values at new inputs, from the stored ensembles
    /// (original units; probabilities in probit mode).
    pub fn eval_draws(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let ens = self.ensembles.as_ref().ok_or_else(|| {
            Error::InvalidData(
                "this fit was saved without ensemble snapshots; re-run fit with \
                 store_ensembles enabled"
                    .into(),
            )
        })?;
        let n_pts = x.nrows();
        let mut out = Array2::zeros((ens.draws.len(), n_pts));
        let rows: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
        for (d, trees) in ens.draws.iter().enumerate() {
            for (i, row) in rows.iter().enumerate() {
                let v = crate::ensemble::evaluate_ensemble(trees, row);
                out[[d, i]] = self.to_output_scale(v);
            }
        }
        Ok(out)
    }

    fn to_output_scale(&self, model_value: f64) -> f64 {
        match (self.mode, &self.y_scale) {
            (Mode::Probit, _) => normal_cdf(model_value),
            (Mode::Continuous, Some(s)) => s.inverse(model_value),
            (Mode::Continuous, None) => model_value,
        }
    }
}

/// Points prepared for repeated ensemble evaluation; 1-D sets are sorted
/// once so each tree is applied by interval fill instead of per-point
/// routing.
struct PointSet {
    n: usize,
    p: usize,
    rows: Vec<f64>,
    sorted_1d: Option<(Vec<f64>, Vec<usize>)>,
}

impl PointSet {
    fn new(points: &Array2<f64>) -> Self {
        let n = points.nrows();
        let p = points.ncols();
        let rows: Vec<f64> = points.iter().cloned().collect();
        let sorted_1d = (p == 1).then(|| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| rows[a].partial_cmp(&rows[b]).expect("NaN eval point"));
            let sorted: Vec<f64> = idx.iter().map(|&i| rows[i]).collect();
            (sorted, idx)
        });
        PointSet {
            n,
            p,
            rows,
            sorted_1d,
        }
    }

    /// Model-scale ensemble values into `out`.
    fn evaluate(&self, trees: &[Tree], scratch: &mut Vec<f64>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        match &self.sorted_1d {
            Some((sorted, idx)) => {
                scratch.clear();
                scratch.resize(self.n, 0.0);
                accumulate_ensemble_sorted_1d(trees, sorted, scratch);
                for (k, &i) in idx.iter().enumerate() {
                    out[i] = scratch[k];
                }
            }
            None => {
                out.fill(0.0);
                for tree in trees {
                    for i in 0..self.n {
                        out[i] += tree.eval(&self.rows[i * self.p..(i + 1) * self.p]);
                    }
                }
            }
        }
    }
}

/// Shared, read-only inputs for every chain of a run.
struct RunInputs<'a> {
    hp: &'a HyperParams,
    cfg: &'a SamplerConfig,
    grid: CutpointGrid,
    x_star: Vec<f64>,
    n: usize,
    p: usize,
    /// Model-scale response (rescaled y, or the 0/1 labels in probit mode).
    y_model: Vec<f64>,
    y_binary: Vec<bool>,
    scaler: Option<YScaler>,
    sigma2_init: f64,
    train_points: PointSet,
    eval_points: Vec<(usize, PointSet)>,
    eval_sets: &'a [EvalSet],
    latent_active: bool,
}

struct ChainOutput {
    sigma: Vec<f64>,
    train_f: Vec<f64>,
    eval_per_draw: Vec<Vec<f64>>,
    eval_mean: Vec<Vec<f64>>,
    latent: Vec<Vec<f64>>,
    accepted: Vec<u64>,
    proposed: Vec<u64>,
    sigma_trace: Vec<f64>,
    ensembles: Vec<Vec<Tree>>,
}

/// Run the configured sampler on a dataset. `evals` names extra input sets
/// at which function values are recorded.
pub fn run(
    data: &ObservedDataset,
    hp: &HyperParams,
    cfg: &SamplerConfig,
    evals: &[EvalSet],
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    hp.validate()?;
    data.validate_for_fit(cfg.method == Method::Mebart)?;
    let n = data.n();
    let p = data.p();
    if hp.p() != p {
        return Err(Error::Config(format!(
            "hyperparameters built for {} predictors, data has {p}",
            hp.p()
        )));
    }
    for e in evals {
        if e.points.ncols() != p {
            return Err(Error::Config(format!(
                "eval set '{}' has {} columns, data has {p}",
                e.name,
                e.points.ncols()
            )));
        }
    }

    let (y_model, y_binary, scaler, sigma2_init) = match cfg.mode {
        Mode::Continuous => {
            let scaler = YScaler::fit(data.y.as_slice().expect("contiguous y"))?;
            let y_model: Vec<f64> = data.y.iter().map(|&v| scaler.forward(v)).collect();
            let sigma2_init = crate::stats::variance(&y_model);
            (y_model, Vec::new(), Some(scaler), sigma2_init)
        }
        Mode::Probit => {
            if !data.binary_y {
                return Err(Error::InvalidData(
                    "probit mode requires a binary response in {0,1}".into(),
                ));
            }
            let y_binary: Vec<bool> = data.y.iter().map(|&v| v == 1.0).collect();
            (vec![0.0; n], y_binary, None, 1.0)
        }
    };

    let x_star: Vec<f64> = data.x_star.iter().cloned().collect();
    let sigma_e_sd: Vec<f64> = hp.sigma_e_sq.iter().map(|v| v.sqrt()).collect();
    let grid = CutpointGrid::from_data(&x_star, n, p, &sigma_e_sd, hp.n_cutpoints);

    let latent_active =
        cfg.method == Method::Mebart && hp.proposal_scale.iter().any(|&s| s > 0.0);

    let inputs = RunInputs {
        hp,
        cfg,
        grid,
        n,
        p,
        y_model,
        y_binary,
        scaler,
        sigma2_init,
        train_points: PointSet::new(&data.x_star),
        eval_points: evals
            .iter()
            .enumerate()
            .map(|(k, e)| (k, PointSet::new(&e.points)))
            .collect(),
        eval_sets: evals,
        x_star,
        latent_active,
    };

    let chain_ids: Vec<u64> = (0..cfg.n_chains as u64).collect();
    let outputs: Vec<ChainOutput> = if cfg.n_chains > 1 {
        chain_ids
            .par_iter()
            .map(|&c| run_one_chain(&inputs, c))
            .collect()
    } else {
        chain_ids.iter().map(|&c| run_one_chain(&inputs, c)).collect()
    };

    assemble(data, &inputs, cfg, outputs)
}

fn assemble(
    data: &ObservedDataset,
    inputs: &RunInputs<'_>,
    cfg: &SamplerConfig,
    outputs: Vec<ChainOutput>,
) -> Result<PosteriorDraws> {
    let n_draws = cfg.n_chains * cfg.n_keep;
    let n = inputs.n;
    let mut sigma = Vec::with_capacity(if cfg.mode == Mode::Continuous { n_draws } else { 0 });
    let mut train_f = Vec::with_capacity(n_draws * n);
    let mut latent: Vec<Vec<f64>> = Vec::new();
    let mut accepted = vec![0u64; n];
    let mut proposed = vec![0u64; n];
    let mut sigma_trace = Vec::with_capacity(cfg.n_chains);
    let mut ensembles: Vec<Vec<Tree>> = Vec::new();
    let mut eval_per_draw: Vec<Vec<f64>> =
        inputs.eval_sets.iter().map(|_| Vec::new()).collect();
    let mut eval_mean: Vec<Vec<f64>> = inputs
        .eval_sets
        .iter()
        .enumerate()
        .map(|(k, _)| vec![0.0; inputs.eval_points[k].1.n])
        .collect();

    for out in outputs {
        sigma.extend(out.sigma);
        train_f.extend(out.train_f);
        latent.extend(out.latent);
        for (a, v) in accepted.iter_mut().zip(&out.accepted) {
            *a += v;
        }
        for (a, v) in proposed.iter_mut().zip(&out.proposed) {
            *a += v;
        }
        if cfg.mode == Mode::Continuous {
            sigma_trace.push(out.sigma_trace);
        }
        ensembles.extend(out.ensembles);
        for (k, chunk) in out.eval_per_draw.into_iter().enumerate() {
            eval_per_draw[k].extend(chunk);
        }
        for (k, m) in out.eval_mean.into_iter().enumerate() {
            for (a, v) in eval_mean[k].iter_mut().zip(m) {
                *a += v;
            }
        }
    }
    for m in eval_mean.iter_mut() {
        for v in m.iter_mut() {
            *v /= cfg.n_chains as f64;
        }
    }

    let evals = inputs
        .eval_sets
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let n_pts = inputs.eval_points[k].1.n;
            EvalTrace {
                name: e.name.clone(),
                per_draw: e.per_draw.then(|| {
                    Array2::from_shape_vec((n_draws, n_pts), std::mem::take(&mut eval_per_draw[k]))
                        .expect("eval draw shape")
                }),
                mean: std::mem::take(&mut eval_mean[k]),
            }
        })
        .collect();

    let acceptance = inputs.latent_active.then(|| {
        accepted
            .iter()
            .zip(&proposed)
            .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
            .collect::<Vec<f64>>()
    });

    Ok(PosteriorDraws {
        mode: cfg.mode,
        method: cfg.method,
        n_chains: cfg.n_chains,
        n_keep: cfg.n_keep,
        n_burn: cfg.n_burn,
        thin: cfg.thin,
        seed: cfg.seed,
        sigma,
        train_f: Array2::from_shape_vec((n_draws, data.n()), train_f).expect("train_f shape"),
        evals,
        latent_x: (cfg.keep_latent && cfg.method == Method::Mebart).then_some(latent),
        acceptance,
        sigma_trace,
        ensembles: cfg
            .store_ensembles
            .then_some(EnsembleDraws { draws: ensembles }),
        y_scale: inputs.scaler,
    })
}

/// All per-chain mutable state for one sweep-by-sweep run.
struct ChainState<'a> {
    inputs: &'a RunInputs<'a>,
    trees: Vec<Tree>,
    assign: Vec<NodeAssignment>,
    fits: Vec<Vec<f64>>,
    total_fit: Vec<f64>,
    sigma2: f64,
    latent: LatentState,
    /// Probit latents (continuous mode leaves this as the model response).
    y_target: Vec<f64>,
    resid: Vec<f64>,
    leaf_sums: Vec<f64>,
    leaf_counts: Vec<u32>,
    leaf_values: Vec<f64>,
    eval_scratch: Vec<f64>,
    eval_out: Vec<f64>,
}

fn run_one_chain(inputs: &RunInputs<'_>, chain: u64) -> ChainOutput {
    let cfg = inputs.cfg;
    let hp = inputs.hp;
    let n = inputs.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain);

    let mut st = ChainState {
        inputs,
        trees: (0..hp.m).map(|_| Tree::single_leaf(0.0)).collect(),
        assign: Vec::with_capacity(hp.m),
        fits: vec![vec![0.0; n]; hp.m],
        total_fit: vec![0.0; n],
        sigma2: inputs.sigma2_init,
        latent: LatentState::from_observed(&inputs.x_star, n, inputs.p),
        y_target: inputs.y_model.clone(),
        resid: vec![0.0; n],
        leaf_sums: Vec::new(),
        leaf_counts: Vec::new(),
        leaf_values: Vec::new(),
        eval_scratch: Vec::new(),
        eval_out: vec![0.0; n],
    };
    for t in &st.trees {
        st.assign
            .push(NodeAssignment::from_scratch(t, &st.latent.x, n, inputs.p));
    }

    let n_sweeps = cfg.n_sweeps();
    let check_every = if cfg.check_every > 0 {
        cfg.check_every
    } else if cfg!(debug_assertions) {
        CHECK_EVERY_DEFAULT
    } else {
        usize::MAX
    };

    let mut out = ChainOutput {
        sigma: Vec::with_capacity(cfg.n_keep),
        train_f: Vec::with_capacity(cfg.n_keep * n),
        eval_per_draw: inputs
            .eval_sets
            .iter()
            .map(|e| {
                if e.per_draw {
                    Vec::with_capacity(cfg.n_keep)
                } else {
                    Vec::new()
                }
            })
            .collect(),
        eval_mean: inputs
            .eval_points
            .iter()
            .map(|(_, ps)| vec![0.0; ps.n])
            .collect(),
        latent: Vec::new(),
        accepted: vec![0; n],
        proposed: vec![0; n],
        sigma_trace: Vec::with_capacity(if cfg.mode == Mode::Continuous {
            n_sweeps
        } else {
            0
        }),
        ensembles: Vec::new(),
    };

    for sweep in 0..n_sweeps {
        st.one_sweep(&mut rng);

        if cfg.mode == Mode::Continuous {
            let s = inputs.scaler.expect("continuous mode has a scaler");
            out.sigma_trace.push(s.sd_to_original(st.sigma2.sqrt()));
        }

        let post_burn = sweep >= cfg.n_burn;
        let kept = post_burn && (sweep - cfg.n_burn + 1) % cfg.thin == 0;
        if kept {
            st.record_draw(&mut out);
        }

        if (sweep + 1) % check_every == 0 {
            st.audit();
        }
    }

    out.accepted.copy_from_slice(&st.latent.accepted);
    out.proposed.copy_from_slice(&st.latent.proposed);
    out
}

impl<'a> ChainState<'a> {
    fn one_sweep<R: Rng>(&mut self, rng: &mut R) {
        let inputs = self.inputs;
        let n = inputs.n;

        if inputs.cfg.mode == Mode::Probit {
            // refresh the probit latents from their truncated-normal full
            // conditionals before the tree loop
            for i in 0..n {
                self.y_target[i] =
                    draw_probit_latent(self.total_fit[i], inputs.y_binary[i], rng);
                debug_assert_eq!(
                    self.y_target[i] > 0.0,
                    inputs.y_binary[i],
                    "probit sign invariant at obs {i}"
                );
            }
        }

        for h in 0..inputs.hp.m {
            // partial residual for tree h
            for i in 0..n {
                self.resid[i] = self.y_target[i] - self.total_fit[i] + self.fits[h][i];
            }
            self.tree_structure_step(h, rng);
            self.leaf_value_step(h, rng);
        }

        if inputs.cfg.mode == Mode::Continuous {
            for i in 0..n {
                self.resid[i] = self.y_target[i] - self.total_fit[i];
            }
            self.sigma2 = sample_sigma2(&self.resid, inputs.hp, rng);
        }

        if inputs.latent_active {
            latent_sweep(
                &mut self.latent,
                &inputs.x_star,
                &self.y_target,
                &self.trees,
                &mut self.assign,
                &mut self.fits,
                &mut self.total_fit,
                self.sigma2,
                inputs.hp,
                rng,
            );
        }
    }

    fn tree_structure_step<R: Rng>(&mut self, h: usize, rng: &mut R) {
        let inputs = self.inputs;
        let hp = inputs.hp;
        let sigma_mu_sq = hp.sigma_mu_sq();
        let tree = &self.trees[h];
        let Some(prop) = propose_move(tree, &inputs.grid, rng) else {
            return;
        };
        match prop.mv {
            TreeMove::Grow {
                leaf,
                var,
                cut: _,
                cut_value,
            } => {
                let (nl, sl, nr, sr) = self.assign[h].split_stats(
                    &prop.mv,
                    cut_value,
                    var as usize,
                    &self.latent.x,
                    inputs.p,
                    &self.resid,
                );
                if nl < N_MIN || nr < N_MIN {
                    return; // empty child: reject outright
                }
                let d_marginal = leaf_core(nl, sl, self.sigma2, sigma_mu_sq)
                    + leaf_core(nr, sr, self.sigma2, sigma_mu_sq)
                    - leaf_core(nl + nr, sl + sr, self.sigma2, sigma_mu_sq);
                let d_prior = log_structure_prior_grow_delta(
                    tree.node(leaf).depth,
                    var as usize,
                    &inputs.grid,
                    hp,
                );
                let log_alpha = d_marginal + d_prior + prop.log_reverse - prop.log_forward;
                if rng.random::<f64>().ln() < log_alpha {
                    let (var, cut, cut_value) = match prop.mv {
                        TreeMove::Grow {
                            var, cut, cut_value, ..
                        } => (var, cut, cut_value),
                        TreeMove::Prune { .. } => unreachable!(),
                    };
                    self.trees[h].grow(leaf, var, cut, cut_value);
                    self.assign[h].apply_grow(&self.trees[h], leaf, &self.latent.x, inputs.p);
                }
            }
            TreeMove::Prune { node } => {
                let (l, r, depth, var) = {
                    let nd = tree.node(node);
                    (nd.left, nd.right, nd.depth, nd.var as usize)
                };
                let mut sl = 0.0;
                let mut sr = 0.0;
                for (i, &lf) in self.assign[h].leaf_of.iter().enumerate() {
                    if lf == l {
                        sl += self.resid[i];
                    } else if lf == r {
                        sr += self.resid[i];
                    }
                }
                let nl = self.assign[h].count(l);
                let nr = self.assign[h].count(r);
                let d_marginal = leaf_core(nl + nr, sl + sr, self.sigma2, sigma_mu_sq)
                    - leaf_core(nl, sl, self.sigma2, sigma_mu_sq)
                    - leaf_core(nr, sr, self.sigma2, sigma_mu_sq);
                let d_prior =
                    -log_structure_prior_grow_delta(depth, var, &inputs.grid, hp);
                let log_alpha = d_marginal + d_prior + prop.log_reverse - prop.log_forward;
                if rng.random::<f64>().ln() < log_alpha {
                    self.trees[h].prune(node);
                    self.assign[h].apply_prune(node, l, r);
                }
            }
        }
    }

    fn leaf_value_step<R: Rng>(&mut self, h: usize, rng: &mut R) {
        let hp = self.inputs.hp;
        self.assign[h].residual_sums(&self.resid, &mut self.leaf_sums);
        let leaves = self.trees[h].leaves();
        self.leaf_counts.clear();
        let mut sums_by_leaf = std::mem::take(&mut self.leaf_values);
        sums_by_leaf.clear();
        for &leaf in &leaves {
            self.leaf_counts.push(self.assign[h].count(leaf));
            sums_by_leaf.push(self.leaf_sums[leaf as usize]);
        }
        let mut draws = Vec::new();
        sample_leaf_values(&self.leaf_counts, &sums_by_leaf, self.sigma2, hp, rng, &mut draws);
        for (&leaf, &mu) in leaves.iter().zip(&draws) {
            self.trees[h].set_mu(leaf, mu);
        }
        self.leaf_values = sums_by_leaf;
        // refresh cached fits and the running total
        let tree = &self.trees[h];
        for (i, &leaf) in self.assign[h].leaf_of.iter().enumerate() {
            let new = tree.node(leaf).mu;
            self.total_fit[i] += new - self.fits[h][i];
            self.fits[h][i] = new;
        }
    }

    fn record_draw(&mut self, out: &mut ChainOutput) {
        let inputs = self.inputs;
        let cfg = inputs.cfg;
        match cfg.mode {
            Mode::Continuous => {
                let s = inputs.scaler.expect("scaler present");
                out.sigma.push(s.sd_to_original(self.sigma2.sqrt()));
            }
            Mode::Probit => {}
        }
        // training inputs: the observed predictors, not the latent state
        inputs
            .train_points
            .evaluate(&self.trees, &mut self.eval_scratch, &mut self.eval_out);
        out.train_f
            .extend(self.eval_out.iter().map(|&v| self.output_scale(v)));

        let mut pts_out: Vec<f64> = Vec::new();
        for (k, ps) in &inputs.eval_points {
            pts_out.clear();
            pts_out.resize(ps.n, 0.0);
            ps.evaluate(&self.trees, &mut self.eval_scratch, &mut pts_out);
            let set = &inputs.eval_sets[*k];
            if set.per_draw {
                out.eval_per_draw[*k].extend(pts_out.iter().map(|&v| self.output_scale(v)));
            }
            for (acc, &v) in out.eval_mean[*k].iter_mut().zip(pts_out.iter()) {
                *acc += self.output_scale(v) / cfg.n_keep as f64;
            }
        }

        if cfg.keep_latent && cfg.method == Method::Mebart {
            out.latent.push(self.latent.x.clone());
        }
        if cfg.store_ensembles {
            out.ensembles
                .push(self.trees.iter().map(|t| t.compacted()).collect());
        }
    }

    fn output_scale(&self, model_value: f64) -> f64 {
        match (self.inputs.cfg.mode, &self.inputs.scaler) {
            (Mode::Probit, _) => normal_cdf(model_value),
            (Mode::Continuous, Some(s)) => s.inverse(model_value),
            (Mode::Continuous, None) => model_value,
        }
    }

    /// Full audit: incrementally maintained routing, counts, cached fits and
    /// totals must match a from-scratch recomputation; probit latents must
    /// respect the sign invariant.
    fn audit(&self) {
        let inputs = self.inputs;
        for h in 0..inputs.hp.m {
            assert!(self.trees[h].check_invariants(), "tree {h} invariants");
            let fresh =
                NodeAssignment::from_scratch(&self.trees[h], &self.latent.x, inputs.n, inputs.p);
            assert_eq!(
                self.assign[h].leaf_of, fresh.leaf_of,
                "assignment drift in tree {h}"
            );
            for i in 0..inputs.n {
                let mu = self.trees[h].node(fresh.leaf_of[i]).mu;
                assert_eq!(
                    self.fits[h][i].to_bits(),
                    mu.to_bits(),
                    "fit cache drift at tree {h}, obs {i}"
                );
            }
        }
        for i in 0..inputs.n {
            let total: f64 = self.fits.iter().map(|f| f[i]).sum();
            assert!(
                (self.total_fit[i] - total).abs() <= 1e-10,
                "total fit drift at obs {i}: {} vs {total}",
                self.total_fit[i]
            );
        }
        if inputs.cfg.mode == Mode::Probit {
            for i in 0..inputs.n {
                assert_eq!(
                    self.y_target[i] > 0.0,
                    inputs.y_binary[i],
                    "probit sign invariant at obs {i}"
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::derive_hyperparams;
    use ndarray::Array1;
    use crate::synthetic::{generate, ScenarioSpec, TestFunction};
    use crate::stats::mean;

    fn quick_cfg(method: Method, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_burn: 100,
            n_keep: 200,
            check_every: 25,
            ..SamplerConfig::new(Mode::Continuous, method, seed)
        }
    }

    fn small_dataset(seed: u64) -> crate::data::ObservedDataset {
        let spec = ScenarioSpec {
            n_train: 60,
            n_test: 0,
            ..ScenarioSpec::defaults(TestFunction::Indicator, seed)
        };
        generate(&spec).unwrap().observed_train()
    }

    #[test]
    fn intercept_only_model_recovers_mean_and_sd() {
        // zero usable cutpoints force single-leaf trees: the fit reduces to
        // an intercept-plus-noise model
        let data = small_dataset(41);
        let mut hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        hp.m = 1;
        hp.n_cutpoints = 0;
        let cfg = SamplerConfig {
            n_burn: 200,
            n_keep: 400,
            ..SamplerConfig::new(Mode::Continuous, Method::Bart, 5)
        };
        let draws = run(&data, &hp, &cfg, &[]).unwrap();
        let y: Vec<f64> = data.y.iter().cloned().collect();
        let f_hat = mean(&draws.train_f_mean());
        assert!(
            (f_hat - mean(&y)).abs() < 0.1,
            "intercept {f_hat} vs mean {}",
            mean(&y)
        );
        let sd_y = crate::stats::variance(&y).sqrt();
        let sig = mean(&draws.sigma);
        assert!(
            (sig - sd_y).abs() < 0.2 * sd_y,
            "sigma {sig} vs sd(y) {sd_y}"
        );
        // every tree stayed a single leaf: train_f is constant per draw
        for row in draws.train_f.outer_iter() {
            let first = row[0];
            assert!(row.iter().all(|&v| (v - first).abs() < 1e-12));
        }
    }

    #[test]
    fn fixed_seed_reproduces_draws_exactly() {
        let data = small_dataset(42);
        let hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        let mut hp = hp;
        hp.m = 40;
        let cfg = quick_cfg(Method::Mebart, 77);
        let a = run(&data, &hp, &cfg, &[]).unwrap();
        let b = run(&data, &hp, &cfg, &[]).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.train_f, b.train_f);
        assert_eq!(a.latent_x, b.latent_x);
        let c = run(&data, &hp, &SamplerConfig { seed: 78, ..cfg }, &[]).unwrap();
        assert_ne!(a.sigma, c.sigma);
    }

    #[test]
    fn thread_count_does_not_change_multichain_draws() {
        let data = small_dataset(43);
        let mut hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        hp.m = 25;
        let cfg = SamplerConfig {
            n_burn: 50,
            n_keep: 60,
            n_chains: 3,
            ..SamplerConfig::new(Mode::Continuous, Method::Mebart, 9)
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| run(&data, &hp, &cfg, &[]).unwrap());
        let b = pool4.install(|| run(&data, &hp, &cfg, &[]).unwrap());
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.train_f, b.train_f);
        assert_eq!(a.latent_x, b.latent_x);
    }

    #[test]
    fn bart_mode_equals_degenerate_mebart() {
        // with zero measurement error the mebart path skips the latent sweep
        // and must reproduce the plain path draw for draw
        let spec = ScenarioSpec {
            n_train: 50,
            n_test: 0,
            sigma_e: 0.0,
            ..ScenarioSpec::defaults(TestFunction::Sin, 4)
        };
        let data = generate(&spec).unwrap().observed_train();
        let mut hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        hp.m = 30;
        let a = run(&data, &hp, &quick_cfg(Method::Bart, 11), &[]).unwrap();
        let b = run(&data, &hp, &quick_cfg(Method::Mebart, 11), &[]).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.train_f, b.train_f);
        assert!(b.acceptance.is_none());
    }

    #[test]
    fn posterior_contracts_on_noiseless_step_data() {
        // clean two-leaf step function: training MSE against the true
        // function must fall with n (averaged over seeds; a single dataset
        // is too noisy to pin an ordering). The cutpoint grid is refined
        // beyond its default so quantization at the jump cannot mask the
        // statistical contraction: at n = 200 the closest straddling pair
        // sits closer than the default 100-point spacing.
        let mut errs = Vec::new();
        for &n in &[50usize, 200] {
            let mut acc = 0.0;
            for seed in [21u64, 22, 23] {
                let spec = ScenarioSpec {
                    n_train: n,
                    n_test: 0,
                    sigma_e: 0.0,
                    sigma_y: 0.1,
                    ..ScenarioSpec::defaults(TestFunction::Indicator, seed)
                };
                let ds = generate(&spec).unwrap();
                let data = ds.observed_train();
                let mut hp =
                    derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
                hp.n_cutpoints = 2000;
                let cfg = SamplerConfig {
                    n_burn: 200,
                    n_keep: 300,
                    ..SamplerConfig::new(Mode::Continuous, Method::Bart, seed + 10)
                };
                let draws = run(&data, &hp, &cfg, &[]).unwrap();
                let f_hat = draws.train_f_mean();
                let truth: Vec<f64> = ds.f_true_train.iter().cloned().collect();
                acc += crate::metrics::mse(&f_hat, &truth).unwrap();
            }
            errs.push(acc / 3.0);
        }
        assert!(errs[1] < errs[0], "mse did not improve: {errs:?}");
        assert!(errs[1] < 0.05, "n=200 mse {}", errs[1]);
    }

    #[test]
    fn eval_sets_record_means_and_draws() {
        let ds = generate(&ScenarioSpec {
            n_train: 40,
            n_test: 15,
            ..ScenarioSpec::defaults(TestFunction::Sin, 6)
        })
        .unwrap();
        let data = ds.observed_train();
        let mut hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        hp.m = 20;
        let cfg = SamplerConfig {
            n_burn: 30,
            n_keep: 50,
            store_ensembles: true,
            ..SamplerConfig::new(Mode::Continuous, Method::Mebart, 3)
        };
        let evals = vec![
            EvalSet {
                name: "test".into(),
                points: ds.x_star_test.clone(),
                per_draw: true,
            },
            EvalSet {
                name: "grid".into(),
                points: Array2::from_shape_vec(
                    (21, 1),
                    (0..21).map(|i| -1.0 + i as f64 * 0.1).collect(),
                )
                .unwrap(),
                per_draw: false,
            },
        ];
        let draws = run(&data, &hp, &cfg, &evals).unwrap();
        let test = draws.eval("test").unwrap();
        let per = test.per_draw.as_ref().unwrap();
        assert_eq!(per.dim(), (50, 15));
        // running mean equals the column means of the per-draw record
        for j in 0..15 {
            let col_mean = per.column(j).sum() / 50.0;
            assert!((test.mean[j] - col_mean).abs() < 1e-9);
        }
        let grid = draws.eval("grid").unwrap();
        assert!(grid.per_draw.is_none());
        assert_eq!(grid.mean.len(), 21);
        assert!(grid.mean.iter().all(|v| v.is_finite()));
        // stored ensembles re-evaluate to the recorded test draws
        let re = draws.eval_draws(&ds.x_star_test).unwrap();
        for d in 0..5 {
            for j in 0..15 {
                assert!((re[[d, j]] - per[[d, j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn probit_chain_learns_sign_structure() {
        // P(y=1) = Phi(2 sign(x)): the fitted probability curve must cross
        // 0.5 near zero and order the two sides correctly
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let n = 150;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let p1 = normal_cdf(2.0 * if xi >= 0.0 { 1.0 } else { -1.0 });
            x.push(xi);
            y.push(if rng.random::<f64>() < p1 { 1.0 } else { 0.0 });
        }
        let data = crate::data::ObservedDataset {
            x_star: Array2::from_shape_vec((n, 1), x).unwrap(),
            y: Array1::from_vec(y),
            sigma_e: Some(Array1::from_elem(1, 0.05)),
            x_true: None,
            f_true: None,
            binary_y: true,
            predictor_names: vec!["x1".into()],
        };
        let hp = derive_hyperparams(&data, &Default::default(), Mode::Probit).unwrap();
        let cfg = SamplerConfig {
            n_burn: 150,
            n_keep: 300,
            check_every: 50,
            ..SamplerConfig::new(Mode::Probit, Method::Mebart, 8)
        };
        let grid_pts: Vec<f64> = (0..41).map(|i| -0.8 + i as f64 * 0.04).collect();
        let evals = vec![EvalSet {
            name: "grid".into(),
            points: Array2::from_shape_vec((41, 1), grid_pts.clone()).unwrap(),
            per_draw: false,
        }];
        let draws = run(&data, &hp, &cfg, &evals).unwrap();
        assert!(draws.sigma.is_empty());
        assert!(draws.sigma_trace.is_empty());
        let probs = &draws.eval("grid").unwrap().mean;
        assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let left = probs[2]; // x = -0.72
        let right = probs[38]; // x = 0.72
        assert!(left < 0.5 && right > 0.5, "left {left} right {right}");
        // crossing point near zero: somewhere in [-0.25, 0.25] the curve
        // passes 0.5
        let lo_idx = grid_pts.iter().position(|&g| g > -0.25).unwrap();
        let hi_idx = grid_pts.iter().position(|&g| g > 0.25).unwrap();
        assert!(probs[lo_idx..hi_idx].windows(2).any(|w| (w[0] - 0.5) * (w[1] - 0.5) <= 0.0)
            || (probs[lo_idx] - 0.5).abs() < 0.1);
    }

    #[test]
    fn probit_degenerate_labels_push_probabilities_up() {
        let n = 40;
        let data = crate::data::ObservedDataset {
            x_star: Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64),
            y: Array1::ones(n),
            sigma_e: Some(Array1::from_elem(1, 0.05)),
            x_true: None,
            f_true: None,
            binary_y: true,
            predictor_names: vec!["x1".into()],
        };
        let hp = derive_hyperparams(&data, &Default::default(), Mode::Probit).unwrap();
        let cfg = SamplerConfig {
            n_burn: 100,
            n_keep: 200,
            ..SamplerConfig::new(Mode::Probit, Method::Bart, 2)
        };
        let draws = run(&data, &hp, &cfg, &[]).unwrap();
        let mean_p = mean(&draws.train_f_mean());
        assert!(mean_p > 0.9, "mean probability {mean_p}");
    }

    #[test]
    fn latent_corrections_concentrate_at_the_discontinuity() {
        // indicator data: posterior latent estimates should move away from
        // the observed values mostly near the jump at zero, where the
        // response carries signal about the true predictor, and stay close
        // to the observations where the function is flat
        let mut near = Vec::new(); // |x*| < 0.15
        let mut far = Vec::new(); // |x*| > 0.4
        let (mut near_hat, mut near_star) = (0.0f64, 0.0f64);
        let (mut far_hat, mut far_star) = (0.0f64, 0.0f64);
        let mut sigma_e = 0.0;
        for seed in [77u64, 177, 277] {
            let spec = ScenarioSpec::defaults(TestFunction::Indicator, seed);
            sigma_e = spec.sigma_e;
            let ds = generate(&spec).unwrap();
            let data = ds.observed_train();
            let hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
            let cfg = SamplerConfig {
                n_burn: 200,
                n_keep: 500,
                ..SamplerConfig::new(Mode::Continuous, Method::Mebart, seed + 1)
            };
            let draws = run(&data, &hp, &cfg, &[]).unwrap();
            let x_hat = draws.latent_posterior_mean(spec.n_train, 1).unwrap();
            for i in 0..spec.n_train {
                let xs = ds.x_star_train[[i, 0]];
                let xt = ds.x_true_train[[i, 0]];
                let move_size = (x_hat[[i, 0]] - xs).abs();
                if xs.abs() < 0.15 {
                    near.push(move_size);
                    near_hat += (x_hat[[i, 0]] - xt).powi(2);
                    near_star += (xs - xt).powi(2);
                } else if xs.abs() > 0.4 {
                    far.push(move_size);
                    far_hat += (x_hat[[i, 0]] - xt).powi(2);
                    far_star += (xs - xt).powi(2);
                }
            }
        }
        assert!(near.len() >= 5 && far.len() >= 5, "degenerate split of points");
        let mean_near = mean(&near);
        let mean_far = mean(&far);
        // flat-region moves are pure prior shrinkage (roughly
        // (1-lambda)|x*|, below sigma_e); jump-region moves add the
        // response signal on top of that
        assert!(
            mean_far < 0.7 * sigma_e,
            "flat-region moves {mean_far:.4} should stay below sigma_e"
        );
        assert!(
            mean_near > 1.15 * mean_far,
            "moves near the jump ({mean_near:.4}) should exceed moves in flat regions ({mean_far:.4})"
        );
        // the error reduction concentrates where the response is informative
        let near_ratio = (near_hat / near_star).sqrt();
        let far_ratio = (far_hat / far_star).sqrt();
        assert!(
            near_ratio < 0.92,
            "near-jump latent error should shrink, got ratio {near_ratio:.3}"
        );
        assert!(
            far_ratio < 1.05,
            "flat-region latent error should not degrade, got ratio {far_ratio:.3}"
        );
        assert!(near_ratio < far_ratio);
    }

    #[test]
    fn sigma_trace_stabilizes_near_truth_only_with_latent_updates() {
        let spec = ScenarioSpec::defaults(TestFunction::Indicator, 99);
        let ds = generate(&spec).unwrap();
        let data = ds.observed_train();
        let hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        let mut post_burn_means = Vec::new();
        for method in [Method::Mebart, Method::Bart] {
            let cfg = SamplerConfig {
                n_burn: 200,
                n_keep: 400,
                ..SamplerConfig::new(Mode::Continuous, method, 5)
            };
            let draws = run(&data, &hp, &cfg, &[]).unwrap();
            let trace = &draws.sigma_trace[0];
            assert_eq!(trace.len(), 600);
            post_burn_means.push(mean(&trace[200..]));
        }
        let (me, bart) = (post_burn_means[0], post_burn_means[1]);
        assert!((0.07..=0.16).contains(&me), "mebart trace settles at {me:.3}");
        assert!(bart > me + 0.1, "baseline trace {bart:.3} vs mebart {me:.3}");
    }

    #[test]
    fn rejects_nonbinary_response_in_probit_mode() {
        let data = small_dataset(3);
        let hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        let cfg = SamplerConfig::new(Mode::Probit, Method::Bart, 1);
        assert!(run(&data, &hp, &cfg, &[]).is_err());
    }

    #[test]
    fn missing_sigma_e_rejected_in_mebart_mode() {
        let mut data = small_dataset(3);
        data.sigma_e = None;
        let hp = HyperParams {
            m: 10,
            k: 2.0,
            f_half_range: 0.5,
            alpha_tree: 0.95,
            beta_tree: 2.0,
            nu: 3.0,
            lambda: 0.01,
            mu_x: vec![0.0],
            sigma_x_sq: vec![0.09],
            sigma_e_sq: vec![0.01],
            proposal_scale: vec![0.1],
            n_cutpoints: 100,
        };
        let cfg = SamplerConfig::new(Mode::Continuous, Method::Mebart, 1);
        assert!(run(&data, &hp, &cfg, &[]).is_err());
    }

    #[test]
    fn sigma_trace_covers_burn_in() {
        let data = small_dataset(12);
        let mut hp = derive_hyperparams(&data, &Default::default(), Mode::Continuous).unwrap();
        hp.m = 15;
        let cfg = SamplerConfig {
            n_burn: 40,
            n_keep: 20,
            thin: 2,
            ..SamplerConfig::new(Mode::Continuous, Method::Bart, 5)
        };
        let draws = run(&data, &hp, &cfg, &[]).unwrap();
        assert_eq!(draws.sigma_trace.len(), 1);
        assert_eq!(draws.sigma_trace[0].len(), 40 + 20 * 2);
        assert_eq!(draws.sigma.len(), 20);
        assert!(draws.sigma_trace[0].iter().all(|&s| s > 0.0));
    }
}
