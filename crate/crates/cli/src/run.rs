//! One function per subcommand. Each returns the checks it ran plus the
//! CSV artifacts to write; nothing touches the file system here.

use std::time::Instant;

use anyhow::{bail, Context, Result};
use plapvisc::calculus::{gradient_field, ExponentTriple};
use plapvisc::envelope::{
    envelope_values, inf_convolve_fast, inf_convolve_oracle, EnvelopeParams, EnvelopeSummary,
};
use plapvisc::field::{self, random_field, sample};
use plapvisc::gallery::{self, GalleryEntry};
use plapvisc::verify::{self, FluxField, PipelineConfig, ScanRegion, SweepKind};
use plapvisc::{Grid, ScalarField, VerificationReport};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Envelope,
    Lemmas,
    Weak,
    Identity,
    Singular,
    Sweep(SweepKind),
    Bench,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Envelope => "envelope",
            Command::Lemmas => "lemmas",
            Command::Weak => "weak",
            Command::Identity => "identity",
            Command::Singular => "singular",
            Command::Sweep(_) => "sweep",
            Command::Bench => "bench",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub nodes: usize,
    pub q: f64,
    pub fast_ms: f64,
    pub values_ms: f64,
    pub oracle_ms: Option<f64>,
    pub speedup: Option<f64>,
}

/// Everything one subcommand produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<VerificationReport>,
    pub summary: Option<EnvelopeSummary>,
    pub bench: Vec<BenchRow>,
    /// `(file stem, csv text)` under `tables/`.
    pub tables: Vec<(String, String)>,
    /// `(file stem, csv text)` under `fields/`.
    pub fields: Vec<(String, String)>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    fn field(&mut self, stem: &str, u: &ScalarField) -> Result<()> {
        let mut buf = Vec::new();
        field::write_csv(u, &mut buf)?;
        self.fields.push((stem.to_string(), String::from_utf8(buf)?));
        Ok(())
    }

    fn sweep_tables(&mut self) {
        for c in &self.checks {
            if c.table.is_empty() {
                continue;
            }
            let mut csv = String::from("param,residual\n");
            for r in &c.table {
                csv.push_str(&format!("{:.16e},{:.16e}\n", r.param, r.residual));
            }
            let stem: String = c
                .name
                .chars()
                .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
                .collect();
            self.tables.push((stem, csv));
        }
    }
}

pub fn grid_for(cfg: &RunConfig, entry: &GalleryEntry) -> Result<Grid> {
    let lo = cfg.grid.lo.clone().unwrap_or_else(|| entry.reference_lo().to_vec());
    let hi = cfg.grid.hi.clone().unwrap_or_else(|| entry.reference_hi().to_vec());
    let n = vec![cfg.grid.n; entry.dim];
    Ok(Grid::new(&lo, &hi, &n)?)
}

fn datum_field(entry: &GalleryEntry, p: f64, grid: &Grid) -> Result<ScalarField> {
    let datum = match gallery::label_oracle(entry, p) {
        Ok(role) => role.datum(),
        Err(_) => gallery::Datum::ZERO,
    };
    Ok(ScalarField::from_fn(grid, |x| datum.eval(x))?)
}

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    let mut out = match cmd {
        Command::Envelope => envelope(cfg)?,
        Command::Lemmas => lemmas(cfg)?,
        Command::Weak => weak(cfg)?,
        Command::Identity => identity(cfg)?,
        Command::Singular => singular(cfg)?,
        Command::Sweep(kind) => sweep(cfg, kind)?,
        Command::Bench => bench(cfg)?,
    };
    out.sweep_tables();
    Ok(out)
}

fn envelope(cfg: &RunConfig) -> Result<Outcome> {
    let entry = gallery::get(&cfg.entry)?;
    let grid = grid_for(cfg, entry)?;
    let u = sample(entry, &grid)?;
    let env = inf_convolve_fast(&u, EnvelopeParams::new(cfg.eps, cfg.q)?);
    let mut rep = VerificationReport::new("envelope_below_field")
        .param("eps", cfg.eps)
        .param("q", cfg.q)
        .param("h", grid.h_max());
    for i in grid.nodes() {
        let x = grid.coord(i);
        rep.check(i, &x[..grid.dim()], env.u_eps().get(i) - u.get(i), 0.0);
        if env.argmin(i).nodes.is_empty() {
            rep.fail(format!("empty argmin set at node {i}"));
        }
    }
    let mut out = Outcome {
        summary: Some(env.summary(&u)),
        checks: vec![rep],
        ..Default::default()
    };
    out.field("u", &u)?;
    out.field("u_eps", env.u_eps())?;
    let mut side = Vec::new();
    env.write_sidecar_csv(&mut side)?;
    out.fields.push(("u_eps_argmin".into(), String::from_utf8(side)?));
    Ok(out)
}

fn lemmas(cfg: &RunConfig) -> Result<Outcome> {
    let entry = gallery::get(&cfg.entry)?;
    let grid = grid_for(cfg, entry)?;
    let u = sample(entry, &grid)?;
    let tols = cfg.tolerances.to_core();
    let mut checks = verify::lemma_suite(&u, entry.lipschitz, cfg.q, &cfg.schedules.eps, &tols)?;
    checks.push(verify::usc_refinement(entry, EnvelopeParams::new(cfg.eps, cfg.q)?, &cfg.schedules.h)?);
    Ok(Outcome {
        checks,
        ..Default::default()
    })
}

fn weak(cfg: &RunConfig) -> Result<Outcome> {
    let entry = gallery::get(&cfg.entry)?;
    let grid = grid_for(cfg, entry)?;
    let h = grid.h_max();
    let u = sample(entry, &grid)?;
    let f = datum_field(entry, cfg.p, &grid)?;
    let tols = cfg.tolerances.to_core();
    let region = ScanRegion::interior(&grid)?;
    let trials = verify::trial_family(&region, h, cfg.trials, cfg.seed)?;
    let rep = verify::supersolution_scan(&u, cfg.p, Some(&f), &trials, tols.grad_tol(h), tols.weak_tol(h))?;
    let flux = FluxField::new(&u, cfg.p, tols.grad_tol(h));
    let mut csv = String::from("trial,cx,cy,rho,amplitude,residual_per_amplitude\n");
    for (i, psi) in trials.iter().enumerate() {
        let r = flux.residual(psi, Some(&f))? / psi.amplitude();
        let c = psi.center();
        csv.push_str(&format!(
            "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            c[0],
            c[1],
            psi.rho(),
            psi.amplitude(),
            r
        ));
    }
    Ok(Outcome {
        checks: vec![rep],
        tables: vec![("weak_trials".into(), csv)],
        ..Default::default()
    })
}

fn identity(cfg: &RunConfig) -> Result<Outcome> {
    let entries = cfg
        .identity
        .entries
        .iter()
        .map(|n| gallery::get(n))
        .collect::<plapvisc::Result<Vec<_>>>()?;
    let triples = cfg
        .identity
        .triples
        .iter()
        .map(|t| ExponentTriple::new(t[0], t[1], t[2]))
        .collect::<plapvisc::Result<Vec<_>>>()?;
    let rep = verify::identity_sweep(&entries, &triples, cfg.identity.points, cfg.seed, cfg.identity.tol)?;
    Ok(Outcome {
        checks: vec![rep],
        ..Default::default()
    })
}

fn singular(cfg: &RunConfig) -> Result<Outcome> {
    let entry = gallery::get(&cfg.entry)?;
    let grid = grid_for(cfg, entry)?;
    let h = grid.h_max();
    let tols = cfg.tolerances.to_core();
    let params = EnvelopeParams::new(cfg.eps, cfg.q)?;
    params.check_admissible(cfg.p)?;
    let u = sample(entry, &grid)?;
    let env = inf_convolve_fast(&u, params);
    let grads = gradient_field(env.u_eps(), tols.grad_tol(h));
    let f = datum_field(entry, cfg.p, &grid)?;
    let f_eps = verify::f_window_inf(&f, env.r_eps())?;
    let mut checks = vec![
        verify::semiconcavity_check(&env, &tols),
        verify::refined_hessian_check(&env, &grads, &tols),
        verify::critical_concavity_check(&env, &grads, &tols),
        verify::critical_sign_check(&u, &env, &f_eps, cfg.p, &tols)?,
    ];
    let pipe = PipelineConfig {
        p: cfg.p,
        q: cfg.q,
        eps: cfg.eps,
        truncate_fraction: cfg.truncate_fraction,
        trials: cfg.trials,
        seed: cfg.seed,
    };
    checks.push(verify::pipeline(entry, h, &pipe, &tols)?);
    if cfg.singular.fatou_samples > 0 {
        let lip = entry.lipschitz.unwrap_or(cfg.singular.lip);
        checks.push(verify::fatou_sampling_check(
            entry.dim,
            cfg.p,
            cfg.q,
            cfg.eps,
            lip,
            cfg.singular.fatou_samples,
            cfg.seed,
        )?);
    }
    let mut out = Outcome {
        checks,
        summary: Some(env.summary(&u)),
        ..Default::default()
    };
    out.field("u_eps", env.u_eps())?;
    let mut ops = Vec::new();
    plapvisc::calculus::write_operator_csv(env.u_eps(), cfg.p, 1e-2, tols.grad_tol(h), &mut ops)?;
    out.tables.push(("operator_samples".into(), String::from_utf8(ops)?));
    Ok(out)
}

fn sweep(cfg: &RunConfig, kind: SweepKind) -> Result<Outcome> {
    let entry = gallery::get(&cfg.entry)?;
    let tols = cfg.tolerances.to_core();
    let mut rep = match kind {
        SweepKind::Eps => {
            let Some(lip) = entry.lipschitz else {
                bail!("entry {} has no Lipschitz constant; the eps sweep needs one", entry.name);
            };
            let grid = grid_for(cfg, entry)?;
            let u = sample(entry, &grid)?;
            verify::eps_gap_sweep(&u, lip, cfg.q, &cfg.schedules.eps, &tols)?
        }
        SweepKind::Delta => {
            let grid = grid_for(cfg, entry)?;
            let u = sample(entry, &grid)?;
            let psi = verify::trial_family(&ScanRegion::interior(&grid)?, grid.h_max(), 1, cfg.seed)?[0];
            verify::delta_sweep(&u, &psi, cfg.p, &cfg.schedules.delta, tols.grad_tol(grid.h_max()))?
        }
        SweepKind::H => {
            let coarse = cfg.schedules.h.iter().cloned().fold(0.0, f64::max);
            let grid = entry.reference_grid(coarse)?;
            let psi = verify::trial_family(&ScanRegion::interior(&grid)?, coarse, 1, cfg.seed)?[0];
            verify::h_sweep(entry, &psi, cfg.p, &cfg.schedules.h, &tols)?
        }
    };
    rep.fit_order();
    Ok(Outcome {
        checks: vec![rep],
        ..Default::default()
    })
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Oracle against both fast paths on seeded random square fields. Timings
/// are measured, never asserted; the check is exact agreement.
fn bench(cfg: &RunConfig) -> Result<Outcome> {
    let mut rep = VerificationReport::new("bench_fast_equals_oracle").param("eps", cfg.bench.eps);
    let mut rows = Vec::new();
    let mut csv = String::from("n,nodes,q,fast_ms,values_ms,oracle_ms,speedup\n");
    for (k, &n) in cfg.bench.sizes.iter().enumerate() {
        let grid = Grid::square(-1.0, 1.0, n)?;
        let u = random_field(&grid, cfg.seed.wrapping_add(k as u64));
        for &q in &cfg.bench.q {
            let params = EnvelopeParams::new(cfg.bench.eps, q).context("bench parameters")?;
            let t = Instant::now();
            let fast = inf_convolve_fast(&u, params);
            let fast_ms = millis(t);
            let t = Instant::now();
            let values = envelope_values(&u, params);
            let values_ms = millis(t);
            for i in grid.nodes() {
                let x = grid.coord(i);
                let a = fast.argmin(i).min;
                let b = values.get(i);
                let ulps = (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs() as f64;
                rep.check(i, &x[..2], ulps, 4.0);
            }
            let (oracle_ms, speedup) = if grid.len() <= cfg.bench.oracle_max_nodes {
                let t = Instant::now();
                let oracle = inf_convolve_oracle(&u, params);
                let ms = millis(t);
                for i in grid.nodes() {
                    let x = grid.coord(i);
                    let same = oracle.argmin(i) == fast.argmin(i);
                    rep.check(i, &x[..2], if same { 0.0 } else { 1.0 }, 0.0);
                }
                (Some(ms), Some(ms / fast_ms.max(1e-9)))
            } else {
                (None, None)
            };
            let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.3}"));
            csv.push_str(&format!(
                "{n},{},{q},{fast_ms:.3},{values_ms:.3},{},{}\n",
                grid.len(),
                opt(oracle_ms),
                opt(speedup)
            ));
            rows.push(BenchRow {
                n,
                nodes: grid.len(),
                q,
                fast_ms,
                values_ms,
                oracle_ms,
                speedup,
            });
        }
    }
    Ok(Outcome {
        checks: vec![rep],
        bench: rows,
        tables: vec![("bench".into(), csv)],
        ..Default::default()
    })
}
