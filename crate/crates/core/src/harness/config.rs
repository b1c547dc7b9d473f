use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::csma::CsmaConfig;
use crate::error::{Error, Result};
use crate::phy::PhyParams;
use crate::spatial::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    OpenPaths,
    SdLines,
    Map,
    Throughput,
    PhySolve,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::OpenPaths, Experiment::SdLines, Experiment::Map, Experiment::Throughput, Experiment::PhySolve];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::OpenPaths => "open-paths",
            Experiment::SdLines => "sd-lines",
            Experiment::Map => "map",
            Experiment::Throughput => "throughput",
            Experiment::PhySolve => "phy-solve",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown experiment {s:?}")))
    }
}

/// One sweep: every `(n, seed)` cell of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub sizes: Vec<f64>,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub beta: f64,
    pub n0: f64,
    pub c: f64,
    pub c1: f64,
    pub epsilon: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub horizon: f64,
    pub warmup: f64,
    /// Overrides the default LOW rate of 1.
    pub lambda_low: Option<f64>,
    /// Overrides the default HIGH rate of `1 / ln² n`.
    pub lambda_high: Option<f64>,
    pub packet_duration: f64,
    pub tracked_high: Option<usize>,
    pub audit: bool,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        let (horizon, warmup) = match experiment {
            Experiment::Throughput => (2_000.0, 500.0),
            _ => (3_000.0, 300.0),
        };
        Self {
            experiment,
            sizes: Vec::new(),
            seeds: Vec::new(),
            alpha: 4.0,
            beta: 10.0,
            n0: 0.0,
            c: 1.7308,
            c1: 3.0,
            epsilon: 0.01,
            delta1: 0.01,
            delta2: 0.01,
            delta3: 0.01,
            horizon,
            warmup,
            lambda_low: None,
            lambda_high: None,
            packet_duration: 1.0,
            tracked_high: Some(512),
            audit: false,
            output: None,
        }
    }

    /// Parses `key=value` lines; `n` and `seed` may repeat, `#` starts a comment.
    pub fn parse(experiment: Experiment, text: &str) -> Result<Self> {
        let mut cfg = Self::new(experiment);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Usage(format!("line {}: {key}: {what} {value:?}", i + 1));
            let num = || value.parse::<f64>().map_err(|_| bad("not a number:"));
            match key {
                "experiment" => {
                    if value.parse::<Experiment>()? != experiment {
                        return Err(bad("config is for a different experiment:"));
                    }
                }
                "n" => cfg.sizes.push(num()?),
                "seed" => cfg.seeds.push(value.parse().map_err(|_| bad("not an unsigned integer:"))?),
                "alpha" => cfg.alpha = num()?,
                "beta" => cfg.beta = num()?,
                "n0" => cfg.n0 = num()?,
                "c" => cfg.c = num()?,
                "c1" => cfg.c1 = num()?,
                "epsilon" => cfg.epsilon = num()?,
                "delta1" => cfg.delta1 = num()?,
                "delta2" => cfg.delta2 = num()?,
                "delta3" => cfg.delta3 = num()?,
                "horizon" => cfg.horizon = num()?,
                "warmup" => cfg.warmup = num()?,
                "lambda_low" => cfg.lambda_low = Some(num()?),
                "lambda_high" => cfg.lambda_high = Some(num()?),
                "packet_duration" => cfg.packet_duration = num()?,
                "tracked_high" => {
                    cfg.tracked_high = match value {
                        "all" => None,
                        v => Some(v.parse().map_err(|_| bad("expected a count or \"all\":"))?),
                    }
                }
                "audit" => cfg.audit = value.parse().map_err(|_| bad("expected true or false:"))?,
                "output" => cfg.output = Some(PathBuf::from(value)),
                _ => return Err(Error::Usage(format!("line {}: unknown key {key:?}", i + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |msg: String| Err(Error::Usage(msg));
        if self.sizes.is_empty() {
            return usage("n: at least one network size is required".into());
        }
        if self.seeds.is_empty() {
            return usage("seed: at least one seed is required".into());
        }
        for &n in &self.sizes {
            if !(n > std::f64::consts::E && n.is_finite()) {
                return usage(format!("n: {n} must exceed e"));
            }
            Partition::new(n.sqrt(), self.c, self.c1)
                .map_err(|e| Error::Usage(format!("n: {n} gives no complete square ({e})")))?;
        }
        for (name, v) in
            [("epsilon", self.epsilon), ("delta1", self.delta1), ("delta2", self.delta2), ("delta3", self.delta3)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return usage(format!("{name}: {v} must be non-negative"));
            }
        }
        let first = self.sizes[0];
        self.phy(first).map_err(|e| Error::Usage(format!("physical parameters: {e}")))?;
        self.csma(first, 0).validate().map_err(|e| Error::Usage(format!("csma timing: {e}")))?;
        Ok(())
    }

    pub fn phy(&self, n: f64) -> Result<PhyParams> {
        PhyParams::resolve(self.alpha, self.beta, self.n0, self.c, self.c1, n)
    }

    pub fn csma(&self, n: f64, seed: u64) -> CsmaConfig {
        let mut cfg = CsmaConfig::for_network(n, self.horizon, self.warmup, seed);
        if let Some(l) = self.lambda_low {
            cfg.lambda_low = l;
        }
        if let Some(h) = self.lambda_high {
            cfg.lambda_high = h;
        }
        cfg.packet_duration = self.packet_duration;
        cfg.tracked_high = self.tracked_high;
        cfg.audit = self.audit;
        cfg
    }

    /// Canonical `key=value` form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = format!("experiment={}\n", self.experiment);
        for n in &self.sizes {
            out += &format!("n={n}\n");
        }
        for s in &self.seeds {
            out += &format!("seed={s}\n");
        }
        for (k, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("n0", self.n0),
            ("c", self.c),
            ("c1", self.c1),
            ("epsilon", self.epsilon),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("delta3", self.delta3),
            ("horizon", self.horizon),
            ("warmup", self.warmup),
            ("packet_duration", self.packet_duration),
        ] {
            out += &format!("{k}={v}\n");
        }
        if let Some(l) = self.lambda_low {
            out += &format!("lambda_low={l}\n");
        }
        if let Some(h) = self.lambda_high {
            out += &format!("lambda_high={h}\n");
        }
        match self.tracked_high {
            Some(k) => out += &format!("tracked_high={k}\n"),
            None => out += "tracked_high=all\n",
        }
        out += &format!("audit={}\n", self.audit);
        if let Some(o) = &self.output {
            out += &format!("output={}\n", o.display());
        }
        out
    }
}
