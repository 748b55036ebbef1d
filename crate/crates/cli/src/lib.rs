//! Command-line runner for the plapvisc checks.

pub mod config;
pub mod run;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use plapvisc::envelope::EnvelopeSummary;
use plapvisc::verify::SweepKind;
use plapvisc::VerificationReport;
use serde::Serialize;

use config::{Overrides, RunConfig};
use run::{BenchRow, Command, Outcome};

#[derive(Debug, Parser)]
#[command(name = "plapvisc", version, about = "Infimal-convolution checks for p-Laplace supersolutions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON config file; unspecified keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for report.json, tables/ and fields/.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long, global = true)]
    pub q: Option<f64>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    /// `key=value` with dotted keys, e.g. `grid.n=65`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Cmd {
    /// Compute u_eps of the configured entry and write it with its argmin sets.
    Envelope,
    /// Envelope lemma suite on the configured entry.
    Lemmas,
    /// Weak-form supersolution scan.
    Weak,
    /// Pointwise exponent identity at random points.
    Identity,
    /// Singular-range chain: envelope, Hessian bounds, critical sign, weak residual.
    Singular,
    /// Convergence study in eps, delta or h.
    Sweep {
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Timing table of the oracle against the fast envelope engines.
    Bench,
    /// Gallery queries.
    Gallery {
        #[command(subcommand)]
        action: GalleryCmd,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum GalleryCmd {
    /// One line per entry: name dim p-range role f.
    List,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Eps,
    Delta,
    H,
}

impl From<KindArg> for SweepKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Eps => SweepKind::Eps,
            KindArg::Delta => SweepKind::Delta,
            KindArg::H => SweepKind::H,
        }
    }
}

impl Cmd {
    pub fn command(&self) -> Option<Command> {
        Some(match self {
            Cmd::Envelope => Command::Envelope,
            Cmd::Lemmas => Command::Lemmas,
            Cmd::Weak => Command::Weak,
            Cmd::Identity => Command::Identity,
            Cmd::Singular => Command::Singular,
            Cmd::Sweep { kind } => Command::Sweep((*kind).into()),
            Cmd::Bench => Command::Bench,
            Cmd::Gallery { .. } => return None,
        })
    }
}

impl GlobalArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            p: self.p,
            q: self.q,
            eps: self.eps,
            pairs: self.overrides.clone(),
        }
    }
}

/// Contents of `report.json`. The output directory is left out so that the
/// bytes depend only on the configuration and seed.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_kind: Option<&'static str>,
    pub config: serde_json::Value,
    pub pass: bool,
    pub checks: Vec<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<EnvelopeSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub bench: Vec<BenchRow>,
}

impl RunReport {
    pub fn new(cmd: Command, cfg: &RunConfig, outcome: &Outcome) -> Self {
        let mut config = serde_json::to_value(cfg).expect("config serializes");
        if let Some(m) = config.as_object_mut() {
            m.remove("out");
        }
        RunReport {
            subcommand: cmd.name().to_string(),
            sweep_kind: match cmd {
                Command::Sweep(k) => Some(k.name()),
                _ => None,
            },
            config,
            pass: outcome.pass(),
            checks: outcome.checks.clone(),
            summary: outcome.summary.clone(),
            bench: outcome.bench.clone(),
        }
    }
}

/// Writes `report.json`, `tables/*.csv` and `fields/*.csv` under `dir`.
pub fn write_outputs(dir: &Path, report: &RunReport, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_string_pretty(report)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    for (sub, files) in [("tables", &outcome.tables), ("fields", &outcome.fields)] {
        if files.is_empty() {
            continue;
        }
        let d = dir.join(sub);
        fs::create_dir_all(&d)?;
        for (stem, text) in files {
            fs::write(d.join(format!("{stem}.csv")), text)?;
        }
    }
    Ok(())
}

/// Runs one subcommand end to end and reports whether every check passed.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<bool> {
    let outcome = run::execute(cmd, cfg)?;
    let report = RunReport::new(cmd, cfg, &outcome);
    write_outputs(Path::new(&cfg.out), &report, &outcome)?;
    for c in &outcome.checks {
        println!(
            "{:<28} {}  checked={} violations={}",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.checked,
            c.violation_count
        );
    }
    Ok(report.pass)
}
