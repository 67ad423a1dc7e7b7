//! Parameter identification: multi-start bounded search over the eight free
//! physiological parameters, minimizing mean squared torque error.
//!
//! Start points come from seeded Latin-hypercube sampling; each start is
//! refined by a derivative-free simplex search with box projection, so every
//! evaluated candidate stays inside the constraint box. Degenerate geometry
//! maps to a large finite penalty instead of an error, which keeps the
//! search space connected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::activation::{activation_series, shape_activation};
use crate::config::Provenance;
use crate::controller::PipelineConfig;
use crate::error::{Error, Result};
use crate::msk::{ankle_torque, AnkleModel};
use crate::signal::{design_highpass, EmgChannelState};
use crate::trial::TrialRecording;
use crate::velocity::velocity_series;

/// Objective value standing in for a candidate whose geometry collapses
/// (non-positive tendon path) anywhere in the data.
pub const DEGENERATE_PENALTY: f64 = 1e9;

/// The free parameters of the search. The dorsiflexor's reference and
/// peak-moment-arm angles are not free: they mirror the plantarflexor's,
/// interchanged, at expansion time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamVector {
    pub plant_f_max: f64,
    pub plant_l_opt: f64,
    pub plant_r_max: f64,
    pub plant_theta_ref_deg: f64,
    pub plant_theta_max_deg: f64,
    pub dorsi_f_max: f64,
    pub dorsi_l_opt: f64,
    pub dorsi_r_max: f64,
    /// Shared shaping factor, present only when the fit included it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape_a: Option<f64>,
}

impl ParamVector {
    pub fn from_model(model: &AnkleModel) -> Self {
        Self {
            plant_f_max: model.plantarflexor.f_max,
            plant_l_opt: model.plantarflexor.l_opt,
            plant_r_max: model.plantarflexor.r_max,
            plant_theta_ref_deg: model.plantarflexor.theta_ref_deg,
            plant_theta_max_deg: model.plantarflexor.theta_max_deg,
            dorsi_f_max: model.dorsiflexor.f_max,
            dorsi_l_opt: model.dorsiflexor.l_opt,
            dorsi_r_max: model.dorsiflexor.r_max,
            shape_a: None,
        }
    }

    /// Expands into a full model over `template`, enforcing the angle
    /// interchange. A fitted shape factor applies to both muscles, nudged
    /// inside its open interval so the result always validates.
    pub fn apply_to(&self, template: &AnkleModel) -> AnkleModel {
        let mut model = *template;
        model.plantarflexor.f_max = self.plant_f_max;
        model.plantarflexor.l_opt = self.plant_l_opt;
        model.plantarflexor.r_max = self.plant_r_max;
        model.plantarflexor.theta_ref_deg = self.plant_theta_ref_deg;
        model.plantarflexor.theta_max_deg = self.plant_theta_max_deg;
        model.dorsiflexor.f_max = self.dorsi_f_max;
        model.dorsiflexor.l_opt = self.dorsi_l_opt;
        model.dorsiflexor.r_max = self.dorsi_r_max;
        model.dorsiflexor.theta_ref_deg = self.plant_theta_max_deg;
        model.dorsiflexor.theta_max_deg = self.plant_theta_ref_deg;
        if let Some(a) = self.shape_a {
            let a = a.clamp(-3.0 + 1e-9, -1e-9);
            model.plantarflexor.shape_a = a;
            model.dorsiflexor.shape_a = a;
        }
        model
    }

    fn to_vec(self, fit_shape: bool) -> Vec<f64> {
        let mut v = vec![
            self.plant_f_max,
            self.plant_l_opt,
            self.plant_r_max,
            self.plant_theta_ref_deg,
            self.plant_theta_max_deg,
            self.dorsi_f_max,
            self.dorsi_l_opt,
            self.dorsi_r_max,
        ];
        if fit_shape {
            v.push(self.shape_a.unwrap_or(-1.0));
        }
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        Self {
            plant_f_max: v[0],
            plant_l_opt: v[1],
            plant_r_max: v[2],
            plant_theta_ref_deg: v[3],
            plant_theta_max_deg: v[4],
            dorsi_f_max: v[5],
            dorsi_l_opt: v[6],
            dorsi_r_max: v[7],
            shape_a: v.get(8).copied(),
        }
    }
}

/// Box constraints, as (min, max) per parameter. Defaults are the reference
/// physiological ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub plant_f_max: (f64, f64),
    pub plant_l_opt: (f64, f64),
    pub plant_r_max: (f64, f64),
    pub plant_theta_ref_deg: (f64, f64),
    pub plant_theta_max_deg: (f64, f64),
    pub dorsi_f_max: (f64, f64),
    pub dorsi_l_opt: (f64, f64),
    pub dorsi_r_max: (f64, f64),
    /// Used only when the shape factor is part of the fit.
    pub shape_a: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            plant_f_max: (500.0, 6000.0),
            plant_l_opt: (0.02, 0.06),
            plant_r_max: (0.01, 0.065),
            plant_theta_ref_deg: (70.0, 130.0),
            plant_theta_max_deg: (70.0, 130.0),
            dorsi_f_max: (500.0, 4000.0),
            dorsi_l_opt: (0.02, 0.145),
            dorsi_r_max: (0.01, 0.065),
            shape_a: (-3.0, 0.0),
        }
    }
}

impl Bounds {
    fn axes(&self, fit_shape: bool) -> Vec<(f64, f64)> {
        let mut v = vec![
            self.plant_f_max,
            self.plant_l_opt,
            self.plant_r_max,
            self.plant_theta_ref_deg,
            self.plant_theta_max_deg,
            self.dorsi_f_max,
            self.dorsi_l_opt,
            self.dorsi_r_max,
        ];
        if fit_shape {
            v.push(self.shape_a);
        }
        v
    }

    pub fn names(fit_shape: bool) -> &'static [&'static str] {
        const BASE: [&str; 9] = [
            "plant_f_max",
            "plant_l_opt",
            "plant_r_max",
            "plant_theta_ref_deg",
            "plant_theta_max_deg",
            "dorsi_f_max",
            "dorsi_l_opt",
            "dorsi_r_max",
            "shape_a",
        ];
        if fit_shape {
            &BASE
        } else {
            &BASE[..8]
        }
    }

    pub fn validate(&self, fit_shape: bool) -> Result<()> {
        for (name, (lo, hi)) in Self::names(fit_shape).iter().zip(self.axes(fit_shape)) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "bound {name}: ({lo}, {hi}) is not a valid interval"
                )));
            }
        }
        for (name, lo) in [
            ("plant_f_max", self.plant_f_max.0),
            ("plant_l_opt", self.plant_l_opt.0),
            ("plant_r_max", self.plant_r_max.0),
            ("dorsi_f_max", self.dorsi_f_max.0),
            ("dorsi_l_opt", self.dorsi_l_opt.0),
            ("dorsi_r_max", self.dorsi_r_max.0),
        ] {
            if lo <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "bound {name}: lower limit {lo} must be > 0"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &ParamVector) -> bool {
        let fit_shape = p.shape_a.is_some();
        p.to_vec(fit_shape)
            .iter()
            .zip(self.axes(fit_shape))
            .all(|(&v, (lo, hi))| v >= lo && v <= hi)
    }
}

fn denormalize(x: &[f64], axes: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(axes)
        .map(|(&u, &(lo, hi))| lo + u * (hi - lo))
        .collect()
}

fn normalize(v: &[f64], axes: &[(f64, f64)]) -> Vec<f64> {
    v.iter()
        .zip(axes)
        .map(|(&x, &(lo, hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

/// A trial reduced to the series the objective consumes: neural activation
/// per muscle (pre-shaping, so it is candidate-independent), kinematics and
/// the reference torque, all sample-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrial {
    pub u_ta: Vec<f64>,
    pub u_gas: Vec<f64>,
    pub theta_deg: Vec<f64>,
    pub omega_deg_s: Vec<f64>,
    pub tau_ref: Vec<f64>,
}

/// Runs the conditioning chain and neural recursion once; fitted parameters
/// only influence shaping and the musculotendon stage, so everything up to
/// the neural activation is reusable across candidates.
pub fn prepare_trial(
    trial: &TrialRecording,
    model: &AnkleModel,
    pipeline: &PipelineConfig,
) -> Result<PreparedTrial> {
    trial.validate().map_err(Error::InvalidInput)?;
    let tau_ref = trial
        .ankle_torque_ref
        .clone()
        .ok_or_else(|| Error::InvalidInput("trial has no ankle_torque_ref column".into()))?;
    let fs = trial.fs_hz;
    let filter = design_highpass(fs, pipeline.filter_cutoff_hz, pipeline.filter_order)?;
    let run = |raw: &[f64], mvc: f64| -> Result<Vec<f64>> {
        let mut ch = EmgChannelState::new(filter.clone(), pipeline.envelope_window_ms, mvc)?;
        let e: Vec<f64> = raw.iter().map(|&x| ch.step(x)).collect();
        // Identity shaping: the recursion output clamped to [0, 1].
        activation_series(&e, model.activation.with_shape(0.0), fs)
    };
    Ok(PreparedTrial {
        u_ta: run(&trial.emg_ta, pipeline.mvc_ta_v)?,
        u_gas: run(&trial.emg_gas, pipeline.mvc_gas_v)?,
        theta_deg: trial.ankle_angle.clone(),
        omega_deg_s: velocity_series(
            &trial.ankle_angle,
            fs,
            pipeline.velocity_mode,
            pipeline.velocity_lowpass_hz,
        )?,
        tau_ref,
    })
}

pub fn prepare_trials(
    trials: &[TrialRecording],
    model: &AnkleModel,
    pipeline: &PipelineConfig,
) -> Result<Vec<PreparedTrial>> {
    trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            prepare_trial(t, model, pipeline).map_err(|e| match e {
                Error::InvalidInput(msg) => Error::InvalidInput(format!("trial {i}: {msg}")),
                other => other,
            })
        })
        .collect()
}

/// Mean squared torque error of a candidate over all samples of all trials,
/// in (N·m)². Degenerate geometry anywhere yields the penalty value.
pub fn objective(p: &ParamVector, prepared: &[PreparedTrial], template: &AnkleModel) -> f64 {
    let model = p.apply_to(template);
    let mut sum = 0.0;
    let mut n = 0usize;
    for tr in prepared {
        for i in 0..tr.tau_ref.len() {
            let a_ta = shape_activation(tr.u_ta[i], model.dorsiflexor.shape_a);
            let a_gas = shape_activation(tr.u_gas[i], model.plantarflexor.shape_a);
            match ankle_torque(a_ta, a_gas, tr.theta_deg[i], tr.omega_deg_s[i], &model) {
                Ok(tau) => {
                    let d = tau - tr.tau_ref[i];
                    sum += d * d;
                    n += 1;
                }
                Err(_) => return DEGENERATE_PENALTY,
            }
        }
    }
    if n == 0 {
        DEGENERATE_PENALTY
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub n_starts: usize,
    pub seed: u64,
    /// Objective evaluation budget per start.
    pub max_evals: usize,
    /// Relative objective tolerance ending a simplex cycle.
    pub rel_tol: f64,
    /// Adds the shared shaping factor as a ninth free parameter.
    pub fit_shape: bool,
    /// Replaces the first sampled start point.
    pub initial: Option<ParamVector>,
    pub parallel: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 64,
            seed: 42,
            max_evals: 2000,
            rel_tol: 1e-10,
            fit_shape: false,
            initial: None,
            parallel: true,
        }
    }
}

/// One local search's outcome. Scalars precede the point tables so the
/// record serializes cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRecord {
    pub index: usize,
    pub objective: f64,
    pub evals: usize,
    pub start: ParamVector,
    pub end: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best: ParamVector,
    /// Mean squared torque error of `best`, (N·m)².
    pub objective: f64,
    pub seed: u64,
    pub starts: Vec<StartRecord>,
}

impl FitResult {
    pub fn model(&self, template: &AnkleModel) -> AnkleModel {
        self.best.apply_to(template)
    }
}

/// One stratified sample per dimension stratum, independently permuted
/// across dimensions.
fn latin_hypercube(n: usize, dims: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut vals: Vec<f64> = (0..n)
            .map(|i| (i as f64 + rng.gen::<f64>()) / n as f64)
            .collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            vals.swap(i, j);
        }
        cols.push(vals);
    }
    (0..n)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect()
}

fn clamp01(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

struct LocalSearch<'a, F: Fn(&[f64]) -> f64> {
    f: &'a F,
    budget: usize,
    evals: usize,
    best_x: Vec<f64>,
    best_f: f64,
}

impl<'a, F: Fn(&[f64]) -> f64> LocalSearch<'a, F> {
    fn try_eval(&mut self, x: &[f64]) -> Option<f64> {
        if self.evals >= self.budget {
            return None;
        }
        self.evals += 1;
        let v = (self.f)(x);
        if v < self.best_f {
            self.best_f = v;
            self.best_x = x.to_vec();
        }
        Some(v)
    }

    /// One simplex descent from `x0` with initial edge length `delta`,
    /// until the vertex values collapse to `rel_tol` or the budget is gone.
    /// All candidate points are projected into the unit box first.
    fn cycle(&mut self, x0: &[f64], delta: f64, rel_tol: f64) {
        let d = x0.len();
        let mut pts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
        pts.push(x0.to_vec());
        for i in 0..d {
            let mut p = x0.to_vec();
            p[i] = if p[i] + delta <= 1.0 { p[i] + delta } else { p[i] - delta };
            p[i] = p[i].clamp(0.0, 1.0);
            pts.push(p);
        }
        let mut fv = Vec::with_capacity(d + 1);
        for p in &pts {
            match self.try_eval(p) {
                Some(v) => fv.push(v),
                None => return,
            }
        }
        loop {
            let mut order: Vec<usize> = (0..=d).collect();
            order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
            let reordered: Vec<(Vec<f64>, f64)> =
                order.iter().map(|&i| (pts[i].clone(), fv[i])).collect();
            for (i, (p, v)) in reordered.into_iter().enumerate() {
                pts[i] = p;
                fv[i] = v;
            }
            if fv[d] - fv[0] <= rel_tol * (fv[0].abs() + 1e-12) {
                return;
            }

            let mut centroid = vec![0.0; d];
            for p in &pts[..d] {
                for (c, x) in centroid.iter_mut().zip(p) {
                    *c += x;
                }
            }
            for c in centroid.iter_mut() {
                *c /= d as f64;
            }
            let toward = |t: f64| -> Vec<f64> {
                let mut x: Vec<f64> = centroid
                    .iter()
                    .zip(&pts[d])
                    .map(|(&c, &w)| c + t * (c - w))
                    .collect();
                clamp01(&mut x);
                x
            };

            let xr = toward(1.0);
            let Some(fr) = self.try_eval(&xr) else { return };
            if fr < fv[0] {
                let xe = toward(2.0);
                let Some(fe) = self.try_eval(&xe) else { return };
                if fe < fr {
                    pts[d] = xe;
                    fv[d] = fe;
                } else {
                    pts[d] = xr;
                    fv[d] = fr;
                }
            } else if fr < fv[d - 1] {
                pts[d] = xr;
                fv[d] = fr;
            } else {
                let outside = fr < fv[d];
                let xc = toward(if outside { 0.5 } else { -0.5 });
                let Some(fc) = self.try_eval(&xc) else { return };
                if fc <= if outside { fr } else { fv[d] } {
                    pts[d] = xc;
                    fv[d] = fc;
                } else {
                    for i in 1..=d {
                        let shrunk: Vec<f64> = pts[i]
                            .iter()
                            .zip(&pts[0])
                            .map(|(&p, &b)| b + 0.5 * (p - b))
                            .collect();
                        let Some(v) = self.try_eval(&shrunk) else { return };
                        pts[i] = shrunk;
                        fv[i] = v;
                    }
                }
            }
        }
    }
}

/// Simplex search with deterministic restarts: each converged cycle
/// restarts from the incumbent with a 4x smaller simplex while budget
/// remains and the previous cycle still improved the incumbent.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    budget: usize,
    rel_tol: f64,
) -> (Vec<f64>, f64, usize) {
    let mut start = x0.to_vec();
    clamp01(&mut start);
    let mut ls = LocalSearch {
        f,
        budget,
        evals: 0,
        best_x: start.clone(),
        best_f: f64::INFINITY,
    };
    ls.try_eval(&start);
    let mut delta = 0.15;
    loop {
        let before = ls.best_f;
        let from = ls.best_x.clone();
        ls.cycle(&from, delta, rel_tol);
        if ls.evals >= ls.budget || delta <= 1e-6 {
            break;
        }
        if !(before - ls.best_f > rel_tol * (ls.best_f.abs() + 1e-12)) {
            break;
        }
        delta *= 0.25;
    }
    (ls.best_x, ls.best_f, ls.evals)
}

/// Multi-start bounded fit. Deterministic for a fixed seed; parallel and
/// serial execution produce the identical result because the per-start
/// records keep their start index and the reduction breaks ties toward the
/// lowest index.
pub fn fit(
    trials: &[TrialRecording],
    template: &AnkleModel,
    pipeline: &PipelineConfig,
    bounds: &Bounds,
    config: &FitConfig,
) -> Result<FitResult> {
    if trials.is_empty() {
        return Err(Error::InvalidInput("no trials to fit".into()));
    }
    template.validate()?;
    pipeline.validate()?;
    bounds.validate(config.fit_shape)?;
    if config.n_starts == 0 {
        return Err(Error::InvalidInput("n_starts must be >= 1".into()));
    }
    if !(config.rel_tol > 0.0) {
        return Err(Error::InvalidInput("rel_tol must be > 0".into()));
    }
    let axes = bounds.axes(config.fit_shape);
    let dims = axes.len();
    if config.max_evals < 2 * (dims + 1) {
        return Err(Error::InvalidInput(format!(
            "max_evals {} cannot even evaluate one simplex twice ({} dims)",
            config.max_evals, dims
        )));
    }

    let prepared = prepare_trials(trials, template, pipeline)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut starts = latin_hypercube(config.n_starts, dims, &mut rng);
    if let Some(init) = &config.initial {
        if config.fit_shape && init.shape_a.is_none() {
            return Err(Error::InvalidInput(
                "initial point lacks shape_a but the fit includes it".into(),
            ));
        }
        starts[0] = normalize(&init.to_vec(config.fit_shape), &axes);
    }

    let eval = |x: &[f64]| -> f64 {
        let p = ParamVector::from_vec(&denormalize(x, &axes));
        let p = if config.fit_shape {
            p
        } else {
            ParamVector { shape_a: None, ..p }
        };
        objective(&p, &prepared, template)
    };
    let run_start = |i: usize| -> StartRecord {
        let x0 = &starts[i];
        let (x_end, f_end, evals) = nelder_mead(&eval, x0, config.max_evals, config.rel_tol);
        StartRecord {
            index: i,
            objective: f_end,
            evals,
            start: ParamVector::from_vec(&denormalize(x0, &axes)),
            end: ParamVector::from_vec(&denormalize(&x_end, &axes)),
        }
    };
    let records: Vec<StartRecord> = if config.parallel {
        (0..config.n_starts).into_par_iter().map(run_start).collect()
    } else {
        (0..config.n_starts).map(run_start).collect()
    };

    let best = records
        .iter()
        .min_by(|a, b| {
            a.objective
                .total_cmp(&b.objective)
                .then(a.index.cmp(&b.index))
        })
        .expect("n_starts >= 1");
    if best.objective >= DEGENERATE_PENALTY {
        return Err(Error::FitFailure(format!(
            "all {} starts ended in the degenerate-geometry penalty region (seed {})",
            records.len(),
            config.seed
        )));
    }
    Ok(FitResult {
        best: best.end,
        objective: best.objective,
        seed: config.seed,
        starts: records,
    })
}

fn default_format_version() -> u32 {
    crate::config::FORMAT_VERSION
}

/// Persisted fit diagnostics: the winning parameters plus every start's
/// trajectory summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReportDocument {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub seed: u64,
    /// Mean squared torque error of the winner, (N·m)².
    pub objective_nm2: f64,
    #[serde(default)]
    pub provenance: Provenance,
    pub best: ParamVector,
    pub starts: Vec<StartRecord>,
}

impl FitReportDocument {
    pub fn new(result: &FitResult, provenance: Provenance) -> Self {
        Self {
            format_version: crate::config::FORMAT_VERSION,
            seed: result.seed,
            objective_nm2: result.objective,
            provenance,
            best: result.best,
            starts: result.starts.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let doc: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        if doc.format_version != crate::config::FORMAT_VERSION {
            return Err(Error::InvalidConfig {
                path: origin.to_string(),
                reason: format!("unsupported format_version {}", doc.format_version),
            });
        }
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }
}
