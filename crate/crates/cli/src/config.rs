use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use gshs::scenarios::{Overrides, ParamValue};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUT: &str = "gshs-out";
pub const OUT_ENV: &str = "GSHS_OUT";

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Catalog entry to run
    #[arg(long)]
    pub scenario: Option<String>,
    /// TOML file with the scenario, resolution and overrides
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed of the ensemble
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of simulated paths
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time step of the simulator and the grid solver
    #[arg(long)]
    pub dt: Option<f64>,
    /// Cells per continuous mode
    #[arg(long)]
    pub grid: Option<usize>,
    /// Final time
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// Output directory (default: $GSHS_OUT, then ./gshs-out)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a scenario parameter or tolerance, e.g. `model.v=2` or `tol.mc_l1=0.03`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for ensemble simulation
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Contents of a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub grid: Option<usize>,
    pub t_end: Option<f64>,
    pub bin_width: Option<f64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub set: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

pub const TOLERANCES: [(&str, f64); 17] = [
    ("dynkin_constant", 1e-12),
    ("dynkin_sigma", 3.0),
    ("flux_rel", 0.05),
    ("guard_density", 1e-10),
    ("guard_share", 0.99),
    ("integer_time_share", 0.95),
    ("intensity_rel", 0.02),
    ("mass_drift", 1e-6),
    ("mc_l1", 0.05),
    ("mode_mass", 0.01),
    ("oracle_abs", 1e-8),
    ("oracle_l1", 0.01),
    ("oracle_sigma", 3.0),
    ("refinement_factor", 2.0),
    ("residual_factor", 5.0),
    ("source_h_factor", 5.0),
    ("transfer_eps", 8.0),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances(BTreeMap<String, f64>);

impl Default for Tolerances {
    fn default() -> Self {
        Self(TOLERANCES.iter().map(|&(k, v)| (k.to_string(), v)).collect())
    }
}

impl Tolerances {
    pub fn get(&self, name: &str) -> f64 {
        self.0[name]
    }

    fn set(&mut self, name: &str, value: f64) -> CliResult<()> {
        if !self.0.contains_key(name) {
            return Err(CliError::Config(format!("tol.{name}: unknown tolerance")));
        }
        if !(value > 0.0 && value.is_finite()) {
            return Err(CliError::Config(format!("tol.{name}: must be positive, got {value}")));
        }
        self.0.insert(name.to_string(), value);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub overrides: Overrides,
    pub seed: u64,
    pub out: PathBuf,
    pub tolerances: Tolerances,
    pub workers: Option<usize>,
}

fn parse_set(entry: &str) -> CliResult<(String, ParamValue)> {
    let (k, v) = entry
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {entry}: expected KEY=VALUE")))?;
    Ok((k.trim().to_string(), ParamValue::parse(v)))
}

impl RunConfig {
    /// Merges, by increasing priority: built-in defaults, `GSHS_OUT`, the
    /// config file, command-line flags.
    pub fn resolve(args: &RunArgs) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let scenario = args
            .scenario
            .clone()
            .or(file.scenario)
            .ok_or_else(|| CliError::Config("no scenario given (use --scenario or a config file)".into()))?;
        let out = args
            .out
            .clone()
            .or(file.out)
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

        let mut tolerances = Tolerances::default();
        for (k, v) in &file.tolerances {
            tolerances.set(k, *v)?;
        }
        let mut overrides = file.set;
        let resolution = |o: &mut Overrides, paths, dt, grid, t_end, bin_width: Option<f64>| {
            let entries: [(&str, Option<f64>); 5] = [
                ("run.n_paths", paths),
                ("run.dt", dt),
                ("grid.cells", grid),
                ("run.t_end", t_end),
                ("run.bin_width", bin_width),
            ];
            for (k, v) in entries {
                if let Some(v) = v {
                    o.insert(k.to_string(), ParamValue::Number(v));
                }
            }
        };
        resolution(
            &mut overrides,
            file.paths.map(|v| v as f64),
            file.dt,
            file.grid.map(|v| v as f64),
            file.t_end,
            file.bin_width,
        );
        for entry in &args.set {
            let (k, v) = parse_set(entry)?;
            if let Some(name) = k.strip_prefix("tol.") {
                match v {
                    ParamValue::Number(x) => tolerances.set(name, x)?,
                    ParamValue::Text(t) => {
                        return Err(CliError::Config(format!("{k}: expected a number, got {t:?}")))
                    }
                }
            } else {
                overrides.insert(k, v);
            }
        }
        resolution(
            &mut overrides,
            args.paths.map(|v| v as f64),
            args.dt,
            args.grid.map(|v| v as f64),
            args.t_end,
            None,
        );
        if args.workers == Some(0) {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        Ok(Self {
            scenario,
            overrides,
            seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            out,
            tolerances,
            workers: args.workers,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn flags_override_the_config_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "scenario = \"conveyor\"\nseed = 7\npaths = 50\ndt = 0.002\n\n[set]\n\"model.v\" = 2\n\"mu0.kind\" = \"delta\"\n\n[tolerances]\nmc_l1 = 0.1"
        )
        .unwrap();
        let args = RunArgs {
            config: Some(f.path().to_path_buf()),
            paths: Some(60),
            out: Some("x".into()),
            set: vec!["model.v=3".into(), "tol.flux_rel=0.1".into()],
            ..Default::default()
        };
        let c = RunConfig::resolve(&args).unwrap();
        assert_eq!(c.scenario, "conveyor");
        assert_eq!(c.seed, 7);
        assert_eq!(c.overrides["run.n_paths"], ParamValue::Number(60.0));
        assert_eq!(c.overrides["run.dt"], ParamValue::Number(0.002));
        assert_eq!(c.overrides["model.v"], ParamValue::Number(3.0));
        assert_eq!(c.overrides["mu0.kind"], ParamValue::Text("delta".into()));
        assert_eq!(c.tolerances.get("mc_l1"), 0.1);
        assert_eq!(c.tolerances.get("flux_rel"), 0.1);
        assert_eq!(c.out, PathBuf::from("x"));
    }

    #[test]
    fn bad_entries_are_config_errors() {
        let args = |set: &str| RunArgs {
            scenario: Some("ctmc2".into()),
            set: vec![set.into()],
            ..Default::default()
        };
        for bad in ["novalue", "tol.nope=1", "tol.mc_l1=-1", "tol.mc_l1=x"] {
            assert_eq!(RunConfig::resolve(&args(bad)).unwrap_err().exit_code(), 2, "{bad}");
        }
        assert!(RunConfig::resolve(&RunArgs::default()).is_err());
    }
}
