//! File outputs: manifest, CSV series, optional dumps, and plot-ready
//! exports. Everything is written with the default float formatting, which
//! round-trips exactly, so reruns are byte-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use endow_core::bsde::{write_diagnostics_csv, BsdeSolution, OracleSolution};
use endow_core::filter::{filter_path, write_filter_csv};
use endow_core::longevity::BondSurface;
use endow_core::pricing::{write_price_csv, PriceReport, StrategySeries};
use endow_core::simulate::{write_paths_csv, PathBundle};

use crate::config::{DumpKind, ScenarioConfig};
use crate::pipeline::RunManifest;
use crate::CliError;

pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let file = File::create(self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn write_all(
    writer: &mut OutputWriter,
    config: &ScenarioConfig,
    bundle: &PathBundle,
    surface: &BondSurface,
    pure: &BsdeSolution,
    claim: &BsdeSolution,
    report: &PriceReport,
    strategy: &StrategySeries,
    oracle: Option<&OracleSolution>,
) -> Result<(), CliError> {
    let mut out = writer.create("price_series.csv")?;
    write_price_csv(report, Some(strategy), &mut out)?;
    out.flush()?;

    // Compact JSON summary of the price report.
    #[derive(serde::Serialize)]
    struct PriceReportJson {
        headline: f64,
        dispersion: f64,
        actuarial_reference: f64,
        n_paths: usize,
        n_nodes: usize,
        mean: Vec<f64>,
        q05: Vec<f64>,
        q95: Vec<f64>,
    }
    let mut out = writer.create("price_report.json")?;
    serde_json::to_writer_pretty(
        &mut out,
        &PriceReportJson {
            headline: report.headline,
            dispersion: report.dispersion,
            actuarial_reference: report.actuarial_reference,
            n_paths: report.n_paths,
            n_nodes: report.n_nodes,
            mean: report.mean.clone(),
            q05: report.q05.clone(),
            q95: report.q95.clone(),
        },
    )
    .map_err(|e| CliError::Numerical(format!("price report serialisation: {e}")))?;
    out.write_all(b"\n")?;
    out.flush()?;

    let dumps = &config.outputs.dumps;
    let wanted = |k: DumpKind| dumps.contains(&k);
    let indices: Vec<usize> = config
        .outputs
        .dump_paths
        .iter()
        .copied()
        .filter(|&p| p < bundle.n_paths)
        .collect();

    if wanted(DumpKind::Paths) {
        let mut out = writer.create("paths.csv")?;
        write_paths_csv(bundle, &indices, &mut out)?;
        out.flush()?;
    }
    if wanted(DumpKind::Filter) {
        for &p in &indices {
            let fp = filter_path(bundle, p, &config.model.chain, &config.model.lambda)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let mut out = writer.create(&format!("filter_path_{p}.csv"))?;
            write_filter_csv(bundle, &[(p, fp)], &mut out)?;
            out.flush()?;
        }
    }
    if wanted(DumpKind::Bsde) {
        let mut out = writer.create("bsde_diagnostics.csv")?;
        write_diagnostics_csv(pure, claim, &mut out)?;
        out.flush()?;
    }
    if wanted(DumpKind::Surface) {
        let mut out = writer.create("bond_surface.csv")?;
        surface.write_csv(&mut out)?;
        out.flush()?;
    }
    if wanted(DumpKind::Plot) {
        emit_plot_data(writer, report, strategy, pure, claim, oracle)?;
    }
    Ok(())
}

/// Tidy plot exports: the price term structure, the strategy profile, and an
/// oracle-vs-solver overlay when the scenario admits the deterministic
/// reduction.
pub fn emit_plot_data(
    writer: &mut OutputWriter,
    report: &PriceReport,
    strategy: &StrategySeries,
    pure: &BsdeSolution,
    claim: &BsdeSolution,
    oracle: Option<&OracleSolution>,
) -> Result<(), CliError> {
    let mut out = writer.create("price_term_structure.csv")?;
    writeln!(out, "t,p_alpha_mean,p_alpha_q05,p_alpha_q95")?;
    for i in 0..report.n_nodes {
        writeln!(
            out,
            "{},{},{},{}",
            report.times[i], report.mean[i], report.q05[i], report.q95[i]
        )?;
    }
    out.flush()?;

    let mut out = writer.create("strategy_profiles.csv")?;
    writeln!(out, "t,theta1_mean,theta2_mean")?;
    for i in 0..strategy.n_nodes {
        writeln!(
            out,
            "{},{},{}",
            report.times[i],
            strategy.node_mean(&strategy.theta1, i),
            strategy.node_mean(&strategy.theta2, i)
        )?;
    }
    out.flush()?;

    if let Some(oracle) = oracle {
        let mut out = writer.create("oracle_overlay.csv")?;
        writeln!(out, "node,t,oracle_U0,solver_U0,oracle_Uhat,solver_Uhat")?;
        for i in 0..oracle.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                i,
                oracle.times[i],
                oracle.u0[i],
                pure.node_mean(i),
                oracle.u_hat[i],
                claim.node_mean(i)
            )?;
        }
        out.flush()?;
    }
    Ok(())
}

pub fn write_manifest(
    dir: &Path,
    manifest: &RunManifest,
    config: &ScenarioConfig,
) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, manifest)
        .map_err(|e| CliError::Numerical(format!("manifest serialisation: {e}")))?;
    out.write_all(b"\n")?;
    out.flush()?;
    // Echo the canonical config next to the manifest so the hash can be
    // recomputed offline.
    let mut cfg = BufWriter::new(File::create(dir.join("config_echo.json"))?);
    cfg.write_all(crate::config::canonical_json(config).as_bytes())?;
    cfg.write_all(b"\n")?;
    cfg.flush()?;
    Ok(())
}

/// Write the oracle series as CSV: `node,t,U0,Uhat,p_alpha`.
pub fn write_oracle_csv(path: &Path, oracle: &OracleSolution) -> Result<(), CliError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "node,t,U0,Uhat,p_alpha")?;
    for i in 0..oracle.times.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i,
            oracle.times[i],
            oracle.u0[i],
            oracle.u_hat[i],
            (oracle.u_hat[i] - oracle.u0[i]) / oracle.alpha
        )?;
    }
    out.flush()?;
    Ok(())
}
