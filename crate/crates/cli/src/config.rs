use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use disorder_core::solve::GridSpec;
use disorder_core::{Error as CoreError, ModelParams, RawParams};
use serde_json::{Map, Value};

/// Bad command-line input or a referenced file that cannot be read.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// 2 for invalid input, 3 for a solver invariant violation, 4 for I/O.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<InputError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::SolverInvariant { .. } => 3,
                CoreError::Io(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    2
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON parameter file with keys lambda, c, mu, m, pi, marks.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "DISORDER_OUT", default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long = "c", global = true)]
    pub cost: Option<f64>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub m: Option<f64>,
    #[arg(long, global = true)]
    pub pi: Option<f64>,
}

impl Common {
    /// Parameters from the file with flag overrides applied on top.
    pub fn model(&self) -> Result<ModelParams> {
        let mut doc = match &self.params {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
                match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(map)) => map,
                    Ok(_) => {
                        return Err(input_error(format!(
                            "{}: expected a JSON object",
                            path.display()
                        )))
                    }
                    Err(e) => return Err(input_error(format!("{}: {e}", path.display()))),
                }
            }
            None => Map::new(),
        };
        let overrides = [
            ("lambda", self.lambda),
            ("c", self.cost),
            ("mu", self.mu),
            ("m", self.m),
            ("pi", self.pi),
        ];
        for (key, v) in overrides {
            if let Some(v) = v {
                doc.insert(key.into(), Value::from(v));
            }
        }
        let raw: RawParams = serde_json::from_value(Value::Object(doc))
            .map_err(|e| input_error(format!("parameters: {e}")))?;
        Ok(ModelParams::new(raw)?)
    }

    pub fn out_path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    pub fn ensure_dir(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = self.out.join(rel);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Nodes per axis.
    #[arg(long, default_value_t = 64)]
    pub grid_n: usize,
    /// Truncation bound; defaults to twice the closed-form continuation extent.
    #[arg(long)]
    pub phi_max: Option<f64>,
    /// Quadrature step along the flow; defaults to 0.05/(λ+μ).
    #[arg(long)]
    pub time_step: Option<f64>,
}

impl GridArgs {
    pub fn spec(&self, params: &ModelParams) -> Result<GridSpec> {
        let mut spec = GridSpec::for_params(params, self.grid_n);
        if let Some(x) = self.phi_max {
            spec.phi_max = x;
        }
        if let Some(x) = self.time_step {
            spec.time_step = x;
        }
        spec.validate(params)?;
        Ok(spec)
    }
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let solver: anyhow::Error = CoreError::SolverInvariant {
            iteration: 3,
            detail: "monotonicity violated by 1e-3".into(),
        }
        .into();
        assert_eq!(exit_code(&solver), 3);
        assert_eq!(
            exit_code(&CoreError::InvalidParams(vec!["c".into()]).into()),
            2
        );
        let io = std::io::Error::new(std::io::ErrorKind::PermissionDenied, "denied");
        assert_eq!(
            exit_code(&anyhow::Error::from(io).context("writing out/x.csv")),
            4
        );
        assert_eq!(
            exit_code(&CoreError::Io(std::io::Error::other("disk")).into()),
            4
        );
        assert_eq!(exit_code(&input_error("bad flag").context("parsing")), 2);
    }
}
