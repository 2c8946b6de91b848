use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use phasekit::config::{parse_set_override, OutputFormat, PhaseList, PrcMethod, RunConfig};
use phasekit::entrainment::WaveShape;
use phasekit::Error;

use crate::error::CliError;
use crate::run::Stage;

/// Phase response and parametric sensitivity analysis of limit-cycle
/// oscillators.
#[derive(Parser, Debug)]
#[command(name = "phasekit", version, about, long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Built-in model (radial, radial-timescale, radial-radius, vdp, goodwin, goodwin-additive)
    #[arg(long, global = true)]
    pub model: Option<String>,

    /// TOML or JSON run configuration
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one configuration entry; a bare name sets a model parameter
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Phase grid size
    #[arg(long, global = true)]
    pub grid: Option<usize>,

    /// Integration tolerance
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    /// Worker threads for the per-parameter loop (0: one per core)
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,

    /// Output directory [default: $PHASEKIT_OUT/<command>-<model>-<hash>]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Periodic orbit, frequency and Floquet multipliers
    Orbit,
    /// Infinitesimal and direct phase response curves
    Prc(PrcArgs),
    /// Period and phase response sensitivities
    Sens(SensArgs),
    /// Coupling function, locking points and their sensitivities
    Entrain {
        #[command(flatten)]
        sens: SensArgs,
        #[command(flatten)]
        entrain: EntrainArgs,
    },
    /// Normalized robustness measures and ranking
    Robust {
        #[command(flatten)]
        sens: SensArgs,
        #[command(flatten)]
        entrain: EntrainArgs,
        #[command(flatten)]
        robust: RobustArgs,
    },
    /// Every stage, every table
    Pipeline {
        #[command(flatten)]
        prc: PrcArgs,
        #[command(flatten)]
        sens: SensArgs,
        #[command(flatten)]
        entrain: EntrainArgs,
        #[command(flatten)]
        robust: RobustArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Adjoint,
    Direct,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InputArg {
    Sine,
    Square,
}

#[derive(Args, Debug, Default)]
pub struct PrcArgs {
    /// Impulse amplitude of direct measurements
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,

    /// Number of equally spaced phases, or a comma-separated list
    #[arg(long, value_name = "N|LIST")]
    pub phases: Option<String>,

    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

#[derive(Args, Debug, Default)]
pub struct SensArgs {
    /// Parameters to analyze: `all` or a comma-separated list
    #[arg(long, value_name = "all|LIST")]
    pub params: Option<String>,

    /// Sensitivities with respect to log p
    #[arg(long, conflicts_with = "absolute")]
    pub relative: bool,

    #[arg(long)]
    pub absolute: bool,

    /// Compare against central finite differences
    #[arg(long)]
    pub check_fd: bool,
}

#[derive(Args, Debug, Default)]
pub struct EntrainArgs {
    #[arg(long, value_enum)]
    pub input: Option<InputArg>,

    /// Forcing amplitude
    #[arg(long)]
    pub eps: Option<f64>,

    /// omega - omega_u
    #[arg(long, allow_hyphen_values = true)]
    pub detune: Option<f64>,

    /// Check the predicted locking phase by direct simulation
    #[arg(long)]
    pub validate: bool,
}

#[derive(Args, Debug, Default)]
pub struct RobustArgs {
    /// Keep parameters whose normalized entrainment sensitivity exceeds this
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl Command {
    pub fn stage(&self) -> Stage {
        match self {
            Command::Orbit => Stage::Orbit,
            Command::Prc(_) => Stage::Prc,
            Command::Sens(_) => Stage::Sens,
            Command::Entrain { .. } => Stage::Entrain,
            Command::Robust { .. } => Stage::Robust,
            Command::Pipeline { .. } => Stage::Pipeline,
        }
    }
}

fn apply_prc(cfg: &mut RunConfig, a: &PrcArgs) -> Result<(), Error> {
    if let Some(e) = a.epsilon {
        cfg.prc.epsilon = e;
    }
    if let Some(p) = &a.phases {
        cfg.prc.phases = PhaseList::parse(p)?;
    }
    if let Some(m) = a.method {
        cfg.prc.method = match m {
            MethodArg::Adjoint => PrcMethod::Adjoint,
            MethodArg::Direct => PrcMethod::Direct,
            MethodArg::Both => PrcMethod::Both,
        };
    }
    Ok(())
}

fn apply_sens(cfg: &mut RunConfig, a: &SensArgs) {
    if let Some(p) = &a.params {
        cfg.parameters = if p.trim() == "all" {
            Vec::new()
        } else {
            p.split(',').map(|s| s.trim().to_string()).collect()
        };
    }
    if a.relative {
        cfg.relative = true;
    }
    if a.absolute {
        cfg.relative = false;
    }
    cfg.check_fd |= a.check_fd;
}

fn apply_entrain(cfg: &mut RunConfig, a: &EntrainArgs) {
    if let Some(i) = a.input {
        cfg.input = match i {
            InputArg::Sine => WaveShape::Sine,
            InputArg::Square => WaveShape::Square {
                duty: 0.5,
                steepness: 50.0,
            },
        };
    }
    if let Some(e) = a.eps {
        cfg.epsilon = e;
    }
    if let Some(d) = a.detune {
        cfg.detune = d;
    }
    cfg.validate |= a.validate;
}

impl Cli {
    /// Layers defaults, the config file, `--set` items and explicit flags.
    pub fn config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::default(),
        };
        for item in &self.set {
            cfg.apply(&parse_set_override(item)?)?;
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(g) = self.grid {
            cfg.grid = g;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(f) = self.format {
            cfg.format = match f {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Json => OutputFormat::Json,
            };
        }
        match &self.command {
            Command::Orbit => {}
            Command::Prc(p) => apply_prc(&mut cfg, p)?,
            Command::Sens(s) => apply_sens(&mut cfg, s),
            Command::Entrain { sens, entrain } => {
                apply_sens(&mut cfg, sens);
                apply_entrain(&mut cfg, entrain);
            }
            Command::Robust { sens, entrain, robust } => {
                apply_sens(&mut cfg, sens);
                apply_entrain(&mut cfg, entrain);
                if let Some(t) = robust.threshold {
                    cfg.threshold = t;
                }
            }
            Command::Pipeline {
                prc,
                sens,
                entrain,
                robust,
            } => {
                apply_prc(&mut cfg, prc)?;
                apply_sens(&mut cfg, sens);
                apply_entrain(&mut cfg, entrain);
                if let Some(t) = robust.threshold {
                    cfg.threshold = t;
                }
            }
        }
        Ok(cfg)
    }

    pub fn out_dir(&self, stage: Stage, model: &str, hash: &str, env_root: Option<&Path>) -> PathBuf {
        match &self.out {
            Some(dir) => dir.clone(),
            None => env_root
                .unwrap_or(Path::new("phasekit-out"))
                .join(format!("{stage}-{model}-{}", &hash[..12])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_set_items() {
        let cli = Cli::try_parse_from([
            "phasekit", "robust", "--set", "epsilon=0.2", "--eps", "0.1", "--threshold", "0.3", "--model", "vdp",
            "--absolute", "--set", "mu=2",
        ])
        .unwrap();
        let cfg = cli.config().unwrap();
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.threshold, 0.3);
        assert_eq!(cfg.model, "vdp");
        assert!(!cfg.relative);
        assert_eq!(cfg.params["mu"], 2.0);
    }

    #[test]
    fn relative_and_absolute_conflict() {
        assert!(Cli::try_parse_from(["phasekit", "sens", "--relative", "--absolute"]).is_err());
    }

    #[test]
    fn default_output_directory() {
        let cli = Cli::try_parse_from(["phasekit", "orbit"]).unwrap();
        let dir = cli.out_dir(Stage::Orbit, "vdp", "0123456789abcdef", Some(Path::new("/r")));
        assert_eq!(dir, PathBuf::from("/r/orbit-vdp-0123456789ab"));
    }
}
