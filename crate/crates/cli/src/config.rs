use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use rs2acf::data::BlobSpec;
use rs2acf::HyperParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rs2acf,
    Cf,
    Lccf,
    Ccf,
    Nmf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rs2acf => "rs2acf",
            Method::Cf => "cf",
            Method::Lccf => "lccf",
            Method::Ccf => "ccf",
            Method::Nmf => "nmf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cluster,
    Classify,
    Weights,
    Trace,
}

/// Synthetic data written as `c=3,n=30,d=10,sep=6,std=1`. `n` is the number
/// of samples per class, or a `/`-separated list of class sizes such as
/// `n=4/30/30`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobArgs {
    pub classes: usize,
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub separation: f64,
    pub std: f64,
}

impl BlobArgs {
    pub fn spec(&self, labeled_fraction: f64, seed: u64) -> BlobSpec {
        BlobSpec {
            num_classes: self.classes,
            samples_per_class: self.sizes.clone(),
            dim: self.dim,
            separation: self.separation,
            std: self.std,
            labeled_fraction,
            seed,
        }
    }
}

impl FromStr for BlobArgs {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut c, mut n, mut d, mut sep, mut std) = (None, None, None, None, None);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .with_context(|| format!("blob field `{part}` is not key=value"))?;
            let value = value.trim();
            match key.trim() {
                "c" => c = Some(value.parse::<usize>().context("blob field c")?),
                "n" => {
                    let sizes = value
                        .split('/')
                        .map(|v| v.trim().parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .context("blob field n")?;
                    n = Some(sizes);
                }
                "d" => d = Some(value.parse::<usize>().context("blob field d")?),
                "sep" => sep = Some(value.parse::<f64>().context("blob field sep")?),
                "std" => std = Some(value.parse::<f64>().context("blob field std")?),
                other => bail!("unknown blob field `{other}` (expected c, n, d, sep, std)"),
            }
        }
        let classes = c.context("blob spec needs c")?;
        let mut sizes = n.context("blob spec needs n")?;
        if sizes.len() == 1 {
            sizes = vec![sizes[0]; classes];
        }
        let args = BlobArgs {
            classes,
            sizes,
            dim: d.context("blob spec needs d")?,
            separation: sep.context("blob spec needs sep")?,
            std: std.unwrap_or(1.0),
        };
        args.spec(0.3, 0).validate()?;
        Ok(args)
    }
}

impl fmt::Display for BlobArgs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.sizes.iter().map(usize::to_string).collect();
        write!(
            f,
            "c={},n={},d={},sep={},std={}",
            self.classes,
            sizes.join("/"),
            self.dim,
            self.separation,
            self.std
        )
    }
}

impl Serialize for BlobArgs {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlobArgs {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|e: anyhow::Error| serde::de::Error::custom(format!("{e:#}")))
    }
}

/// Everything a run depends on. Serialized verbatim into every results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub data: Option<PathBuf>,
    pub blobs: Option<BlobArgs>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `None` means classes + 1.
    pub rank: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub labeled_ratio: f64,
    pub seed: u64,
    /// K-means runs per reported clustering score.
    pub restarts: usize,
    /// Random labeled/unlabeled splits per classification score.
    pub splits: usize,
    /// Labeled ratios to sweep. `classify` defaults to `labeled_ratio`,
    /// `trace` to 0.2, 0.4, 0.6 and 0.8.
    pub ratios: Option<Vec<f64>>,
    /// Graph weight of LCCF.
    pub lambda: f64,
    /// Neighborhood size for the fixed graphs.
    pub neighbors: usize,
    /// Scale of the Gaussian noise added for the noisy `weights` variant;
    /// zero skips it.
    pub noise: f64,
    /// Record wall-clock timings. Off by default so that output is
    /// reproducible byte for byte.
    pub timings: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            method: Method::Rs2acf,
            data: None,
            blobs: None,
            alpha: hp.alpha,
            beta: hp.beta,
            gamma: hp.gamma,
            rank: None,
            tol: hp.tol,
            max_iter: hp.max_iter,
            labeled_ratio: 0.3,
            seed: 0,
            restarts: 20,
            splits: 15,
            ratios: None,
            lambda: 100.0,
            neighbors: 5,
            noise: 0.0,
            timings: false,
            out: None,
        }
    }
}

pub const TRACE_RATIOS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            rank: self.rank,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            ..HyperParams::default()
        }
    }

    /// Labeled ratios the task runs over.
    pub fn sweep(&self, task: Task) -> Vec<f64> {
        match (&self.ratios, task) {
            (Some(r), _) => r.clone(),
            (None, Task::Trace) => TRACE_RATIOS.to_vec(),
            (None, _) => vec![self.labeled_ratio],
        }
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        match (&self.data, &self.blobs) {
            (None, None) => bail!("no data: pass --data <csv> or --blobs c=..,n=..,d=..,sep=..,std=.."),
            (Some(_), Some(_)) => bail!("--data and --blobs are mutually exclusive"),
            _ => {}
        }
        self.hyper_params().validate()?;
        let ratio_ok = |r: f64| r > 0.0 && r < 1.0;
        if !ratio_ok(self.labeled_ratio) {
            bail!("labeled ratio must lie in (0, 1), got {}", self.labeled_ratio);
        }
        let sweep = self.sweep(task);
        if sweep.is_empty() {
            bail!("ratios must not be empty");
        }
        if let Some(r) = sweep.iter().find(|&&r| !ratio_ok(r)) {
            bail!("every ratio must lie in (0, 1), got {r}");
        }
        if self.restarts == 0 {
            bail!("restarts must be >= 1");
        }
        if self.splits == 0 {
            bail!("splits must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!("lambda must be finite and >= 0, got {}", self.lambda);
        }
        if self.neighbors == 0 {
            bail!("neighbors must be >= 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            bail!("noise must be finite and >= 0, got {}", self.noise);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_args_round_trip() {
        let b: BlobArgs = "c=3,n=4/30/30,d=2,sep=6,std=0.5".parse().unwrap();
        assert_eq!(b.sizes, vec![4, 30, 30]);
        assert_eq!(b.to_string(), "c=3,n=4/30/30,d=2,sep=6,std=0.5");
        assert_eq!(b.to_string().parse::<BlobArgs>().unwrap(), b);
    }

    #[test]
    fn blob_args_broadcast_n() {
        let b: BlobArgs = "c=3, n=30, d=10, sep=6".parse().unwrap();
        assert_eq!(b.sizes, vec![30; 3]);
        assert_eq!(b.std, 1.0);
    }

    #[test]
    fn blob_args_rejects_bad_input() {
        for bad in ["c=3,n=30,d=10", "c=3,n=30,d=10,sep=x", "c=3,n=3/3,d=2,sep=1", "c=3,n=30,d=10,sep=6,k=2", "c=1,n=5,d=2,sep=1"] {
            assert!(bad.parse::<BlobArgs>().is_err(), "{bad}");
        }
    }

    #[test]
    fn config_json_keys() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"method":"ccf","blobs":"c=2,n=10,d=3,sep=4","max_iter":7}"#).unwrap();
        assert_eq!(cfg.method, Method::Ccf);
        assert_eq!(cfg.max_iter, 7);
        assert_eq!(cfg.alpha, 1e4);
        assert!(serde_json::from_str::<RunConfig>(r#"{"max_iters":7}"#).is_err());
    }

    #[test]
    fn validation() {
        let ok = RunConfig {
            blobs: Some("c=2,n=10,d=3,sep=4".parse().unwrap()),
            ..RunConfig::default()
        };
        assert!(ok.validate(Task::Cluster).is_ok());
        assert!(RunConfig::default().validate(Task::Cluster).is_err());
        let both = RunConfig { data: Some("x.csv".into()), ..ok.clone() };
        assert!(both.validate(Task::Cluster).is_err());
        for bad in [
            RunConfig { alpha: -1.0, ..ok.clone() },
            RunConfig { tol: 0.0, ..ok.clone() },
            RunConfig { max_iter: 0, ..ok.clone() },
            RunConfig { rank: Some(0), ..ok.clone() },
            RunConfig { labeled_ratio: 1.0, ..ok.clone() },
            RunConfig { ratios: Some(vec![0.2, 0.0]), ..ok.clone() },
            RunConfig { ratios: Some(vec![]), ..ok.clone() },
            RunConfig { restarts: 0, ..ok.clone() },
            RunConfig { splits: 0, ..ok.clone() },
            RunConfig { neighbors: 0, ..ok.clone() },
            RunConfig { noise: f64::NAN, ..ok.clone() },
        ] {
            assert!(bad.validate(Task::Cluster).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn sweep_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.sweep(Task::Trace), TRACE_RATIOS.to_vec());
        assert_eq!(cfg.sweep(Task::Classify), vec![0.3]);
        let cfg = RunConfig { ratios: Some(vec![0.05]), ..cfg };
        assert_eq!(cfg.sweep(Task::Trace), vec![0.05]);
    }
}
