//! Run configuration: JSON config file, command-line overrides, defaults.
//! Precedence is flag > file > default, and unknown config keys are
//! rejected.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use krls::{Kernel, TrainerConfig};
use serde::{Deserialize, Serialize};

/// Optional-everything mirror of [`RunConfig`] as read from a JSON file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub q: Option<usize>,
    pub l_max: Option<usize>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub sparsity: Option<usize>,
    pub lambda0: Option<f64>,
    pub ramp_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub checkpoints: Option<usize>,
    pub normalize_tol: Option<f64>,
    pub seed: Option<u64>,
    pub kernel: Option<String>,
    pub folds: Option<usize>,
    pub bench_sizes: Option<Vec<usize>>,
    pub bench_reps: Option<usize>,
    pub kmod_iters: Option<usize>,
    pub missing_fractions: Option<Vec<f64>>,
}

/// Per-key command-line overrides; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub q: Option<usize>,
    pub l_max: Option<usize>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub sparsity: Option<usize>,
    pub lambda0: Option<f64>,
    pub ramp_fraction: Option<f64>,
    pub epochs: Option<usize>,
    pub checkpoints: Option<usize>,
    pub normalize_tol: Option<f64>,
    pub seed: Option<u64>,
    pub kernel: Option<String>,
    pub folds: Option<usize>,
    pub bench_sizes: Option<Vec<usize>>,
    pub bench_reps: Option<usize>,
    pub kmod_iters: Option<usize>,
}

/// Fully resolved configuration for one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub kernel: Kernel,
    pub folds: usize,
    pub bench_sizes: Vec<usize>,
    pub bench_reps: usize,
    pub kmod_iters: usize,
    pub missing_fractions: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            trainer: TrainerConfig::default(),
            kernel: Kernel::Polynomial {
                degree: 2,
                offset: 1.0,
            },
            folds: 5,
            bench_sizes: vec![100, 200, 400],
            bench_reps: 50,
            kmod_iters: 20,
            missing_fractions: (0..10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

impl RunConfig {
    /// Apply file values over the defaults, then flags over the file.
    pub fn resolve(file: Option<&FileConfig>, flags: &Overrides) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let file_default = FileConfig::default();
        let file = file.unwrap_or(&file_default);

        macro_rules! pick {
            ($target:expr, $field:ident) => {
                if let Some(v) = flags.$field.clone().or_else(|| file.$field.clone()) {
                    $target = v;
                }
            };
        }
        pick!(cfg.trainer.q, q);
        pick!(cfg.trainer.l_max, l_max);
        pick!(cfg.trainer.batch_size, batch_size);
        pick!(cfg.trainer.gamma, gamma);
        pick!(cfg.trainer.delta, delta);
        pick!(cfg.trainer.sparsity, sparsity);
        pick!(cfg.trainer.lambda0, lambda0);
        pick!(cfg.trainer.ramp_fraction, ramp_fraction);
        pick!(cfg.trainer.epochs, epochs);
        pick!(cfg.trainer.checkpoint_count, checkpoints);
        pick!(cfg.trainer.normalize_tol, normalize_tol);
        pick!(cfg.trainer.seed, seed);
        pick!(cfg.folds, folds);
        pick!(cfg.bench_sizes, bench_sizes);
        pick!(cfg.bench_reps, bench_reps);
        pick!(cfg.kmod_iters, kmod_iters);
        if let Some(fractions) = &file.missing_fractions {
            cfg.missing_fractions = fractions.clone();
        }
        if let Some(spec) = flags.kernel.as_deref().or(file.kernel.as_deref()) {
            cfg.kernel = parse_kernel_spec(spec)?;
        }

        cfg.trainer.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        if cfg.folds < 2 {
            bail!("folds must be at least 2, got {}", cfg.folds);
        }
        if cfg.kmod_iters == 0 {
            bail!("kmod iterations must be at least 1");
        }
        if cfg.bench_sizes.is_empty() || cfg.bench_reps == 0 {
            bail!("bench sizes and reps must be non-empty");
        }
        if cfg
            .missing_fractions
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            bail!("missing fractions must lie in [0, 1]");
        }
        cfg.kernel.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(cfg)
    }

    pub fn load_and_resolve(path: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Some(
                    serde_json::from_str::<FileConfig>(&text)
                        .with_context(|| format!("parsing config {}", p.display()))?,
                )
            }
            None => None,
        };
        RunConfig::resolve(file.as_ref(), flags)
    }
}

/// Parse a kernel descriptor: `linear`, `poly:<degree>:<offset>` (offset
/// defaults to 1), or `rbf:<gamma>`.
pub fn parse_kernel_spec(spec: &str) -> Result<Kernel> {
    let parts: Vec<&str> = spec.split(':').collect();
    let kernel = match parts[0] {
        "linear" => {
            if parts.len() > 1 {
                bail!("linear kernel takes no parameters, got `{spec}`");
            }
            Kernel::Linear
        }
        "poly" | "polynomial" => {
            if parts.len() < 2 || parts.len() > 3 {
                bail!("polynomial kernel spec is poly:<degree>[:<offset>], got `{spec}`");
            }
            let degree: u32 = parts[1]
                .parse()
                .with_context(|| format!("bad degree in `{spec}`"))?;
            let offset: f64 = if parts.len() == 3 {
                parts[2]
                    .parse()
                    .with_context(|| format!("bad offset in `{spec}`"))?
            } else {
                1.0
            };
            Kernel::polynomial(degree, offset).map_err(|e| anyhow::anyhow!("{e}"))?
        }
        "rbf" => {
            if parts.len() != 2 {
                bail!("rbf kernel spec is rbf:<gamma>, got `{spec}`");
            }
            let gamma: f64 = parts[1]
                .parse()
                .with_context(|| format!("bad gamma in `{spec}`"))?;
            Kernel::rbf(gamma).map_err(|e| anyhow::anyhow!("{e}"))?
        }
        other => bail!("unknown kernel kind `{other}` in `{spec}`"),
    };
    Ok(kernel)
}

/// Canonical spec string for echoing a kernel back to the user.
pub fn kernel_spec_string(kernel: Kernel) -> String {
    match kernel {
        Kernel::Linear => "linear".to_string(),
        Kernel::Polynomial { degree, offset } => {
            let mut s = String::new();
            write!(s, "poly:{degree}:{offset}").unwrap();
            s
        }
        Kernel::Rbf { gamma } => format!("rbf:{gamma}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_evaluation_protocol() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.trainer.q, 30);
        assert_eq!(cfg.trainer.l_max, 200);
        assert_eq!(cfg.trainer.batch_size, 10);
        assert_eq!(cfg.trainer.gamma, 0.1);
        assert_eq!(cfg.trainer.sparsity, 5);
        assert_eq!(cfg.trainer.lambda0, 0.98);
        assert_eq!(cfg.trainer.ramp_fraction, 0.8);
        assert_eq!(cfg.trainer.checkpoint_count, 20);
        assert_eq!(cfg.folds, 5);
        assert_eq!(
            cfg.kernel,
            Kernel::Polynomial {
                degree: 2,
                offset: 1.0
            }
        );
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file: FileConfig = serde_json::from_str(r#"{"q": 12, "gamma": 0.5}"#).unwrap();
        let flags = Overrides {
            q: Some(15),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&file), &flags).unwrap();
        assert_eq!(cfg.trainer.q, 15); // flag wins
        assert_eq!(cfg.trainer.gamma, 0.5); // file wins over default
        assert_eq!(cfg.trainer.l_max, 200); // default
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let parsed: Result<FileConfig, _> = serde_json::from_str(r#"{"quux": 1}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn invalid_resolved_config_fails() {
        let flags = Overrides {
            sparsity: Some(99),
            ..Overrides::default()
        };
        assert!(RunConfig::resolve(None, &flags).is_err());
    }

    #[test]
    fn kernel_specs_parse() {
        assert_eq!(parse_kernel_spec("linear").unwrap(), Kernel::Linear);
        assert_eq!(
            parse_kernel_spec("poly:2:1").unwrap(),
            Kernel::Polynomial {
                degree: 2,
                offset: 1.0
            }
        );
        assert_eq!(
            parse_kernel_spec("polynomial:3:0.5").unwrap(),
            Kernel::Polynomial {
                degree: 3,
                offset: 0.5
            }
        );
        assert_eq!(
            parse_kernel_spec("rbf:0.25").unwrap(),
            Kernel::Rbf { gamma: 0.25 }
        );
        assert!(parse_kernel_spec("poly").is_err());
        assert!(parse_kernel_spec("mystery:1").is_err());
        assert!(parse_kernel_spec("rbf:-1").is_err());
    }

    #[test]
    fn kernel_spec_string_roundtrips() {
        for spec in ["linear", "poly:2:1", "rbf:0.25"] {
            let k = parse_kernel_spec(spec).unwrap();
            assert_eq!(parse_kernel_spec(&kernel_spec_string(k)).unwrap(), k);
        }
    }
}
