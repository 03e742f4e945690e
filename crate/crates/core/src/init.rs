//! Kernel initializers selectable by their configuration names
//! (`he_normal`, `glorot_uniform`, `truncated_normal`, ...).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_NORMAL_STDDEV: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitializerKind {
    Constant(f64),
    RandomNormal {
        mean: f64,
        stddev: f64,
    },
    GlorotNormal,
    GlorotUniform,
    HeNormal,
    HeUniform,
    LecunNormal,
    LecunUniform,
    /// Normal draws resampled until they fall within two standard deviations.
    TruncatedNormal {
        mean: f64,
        stddev: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Dense,
}

/// `(fan_in, fan_out)` for a conv kernel `[k,k,Cin,Cout]` or a dense matrix `[n,m]`.
pub fn fan_of(shape: &[usize], layer: LayerKind) -> Result<(usize, usize)> {
    match (layer, shape) {
        (LayerKind::Conv, &[kh, kw, cin, cout]) => Ok((kh * kw * cin, kh * kw * cout)),
        (LayerKind::Dense, &[n, m]) => Ok((n, m)),
        _ => Err(Error::shape("fan_of", format!("unsupported rank {} for {layer:?} weights {shape:?}", shape.len()))),
    }
}

fn inferred_fans(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        1 => Ok((shape[0], shape[0])),
        2 => fan_of(shape, LayerKind::Dense),
        4 => fan_of(shape, LayerKind::Conv),
        r => Err(Error::shape("initialize", format!("unsupported rank {r} for {shape:?}"))),
    }
}

enum Rule {
    Fill(f64),
    Normal { mean: f64, stddev: f64 },
    Truncated { mean: f64, stddev: f64 },
    Uniform { limit: f64 },
}

impl InitializerKind {
    fn rule(self, fan_in: usize, fan_out: usize) -> Rule {
        let (fi, fo) = (fan_in as f64, fan_out as f64);
        let normal = |var: f64| Rule::Normal { mean: 0.0, stddev: var.sqrt() };
        match self {
            Self::Constant(v) => Rule::Fill(v),
            Self::RandomNormal { mean, stddev } => Rule::Normal { mean, stddev },
            Self::TruncatedNormal { mean, stddev } => Rule::Truncated { mean, stddev },
            Self::GlorotNormal => normal(2.0 / (fi + fo)),
            Self::GlorotUniform => Rule::Uniform { limit: (6.0 / (fi + fo)).sqrt() },
            Self::HeNormal => normal(2.0 / fi),
            Self::HeUniform => Rule::Uniform { limit: (6.0 / fi).sqrt() },
            Self::LecunNormal => normal(1.0 / fi),
            Self::LecunUniform => Rule::Uniform { limit: (3.0 / fi).sqrt() },
        }
    }

    /// Target standard deviation of the samples, or `None` for `constant` and
    /// `truncated_normal` (whose spread is reduced by the truncation).
    pub fn target_stddev(self, fan_in: usize, fan_out: usize) -> Option<f64> {
        match self.rule(fan_in, fan_out) {
            Rule::Normal { stddev, .. } => Some(stddev),
            Rule::Uniform { limit } => Some(limit / 3f64.sqrt()),
            Rule::Fill(_) | Rule::Truncated { .. } => None,
        }
    }

    /// Closed-form half-width for the uniform family.
    pub fn uniform_limit(self, fan_in: usize, fan_out: usize) -> Option<f64> {
        match self.rule(fan_in, fan_out) {
            Rule::Uniform { limit } => Some(limit),
            _ => None,
        }
    }

    pub fn all_default() -> [InitializerKind; 9] {
        [
            Self::Constant(0.0),
            Self::RandomNormal { mean: 0.0, stddev: DEFAULT_NORMAL_STDDEV },
            Self::GlorotNormal,
            Self::GlorotUniform,
            Self::HeNormal,
            Self::HeUniform,
            Self::LecunNormal,
            Self::LecunUniform,
            Self::TruncatedNormal { mean: 0.0, stddev: DEFAULT_NORMAL_STDDEV },
        ]
    }
}

/// Draws a tensor of `shape`; fan geometry is inferred from the rank
/// (4 = conv kernel, 2 = dense matrix, 1 = vector).
pub fn initialize<T: Scalar, R: Rng + ?Sized>(
    kind: InitializerKind,
    shape: &[usize],
    rng: &mut R,
) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = inferred_fans(shape)?;
    if shape.contains(&0) {
        return Err(Error::shape("initialize", format!("zero dimension in {shape:?}")));
    }
    let n: usize = shape.iter().product();
    let data: Vec<T> = match kind.rule(fan_in, fan_out) {
        Rule::Fill(v) => vec![T::of(v); n],
        Rule::Normal { mean, stddev } => (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(mean + stddev * z)
            })
            .collect(),
        Rule::Truncated { mean, stddev } => (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break T::of(mean + stddev * z);
                }
            })
            .collect(),
        Rule::Uniform { limit } => {
            let bound = T::of(limit);
            (0..n)
                .map(|_| loop {
                    let u: f64 = rng.random();
                    let v = T::of(limit * (2.0 * u - 1.0));
                    if v.abs() < bound {
                        break v;
                    }
                })
                .collect()
        }
    };
    Tensor::new(shape, data)
}

impl fmt::Display for InitializerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Constant(v) => write!(f, "constant({v})"),
            Self::RandomNormal { mean, stddev } => write!(f, "random_normal({mean},{stddev})"),
            Self::TruncatedNormal { mean, stddev } => write!(f, "truncated_normal({mean},{stddev})"),
            Self::GlorotNormal => f.write_str("glorot_normal"),
            Self::GlorotUniform => f.write_str("glorot_uniform"),
            Self::HeNormal => f.write_str("he_normal"),
            Self::HeUniform => f.write_str("he_uniform"),
            Self::LecunNormal => f.write_str("lecun_normal"),
            Self::LecunUniform => f.write_str("lecun_uniform"),
        }
    }
}

impl InitializerKind {
    /// Short name without parameters, e.g. `truncated_normal`.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant(_) => "constant",
            Self::RandomNormal { .. } => "random_normal",
            Self::TruncatedNormal { .. } => "truncated_normal",
            Self::GlorotNormal => "glorot_normal",
            Self::GlorotUniform => "glorot_uniform",
            Self::HeNormal => "he_normal",
            Self::HeUniform => "he_uniform",
            Self::LecunNormal => "lecun_normal",
            Self::LecunUniform => "lecun_uniform",
        }
    }
}

fn parse_args(s: &str) -> Result<(&str, Vec<f64>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s, Vec::new()));
    };
    let inner = s[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::invalid(format!("unbalanced parentheses in initializer {s:?}")))?;
    let args = inner
        .split(',')
        .filter(|a| !a.trim().is_empty())
        .map(|a| a.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad initializer argument {a:?}"))))
        .collect::<Result<_>>()?;
    Ok((s[..open].trim(), args))
}

impl FromStr for InitializerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_args(s)?;
        let normal_args = |args: &[f64]| match *args {
            [] => Ok((0.0, DEFAULT_NORMAL_STDDEV)),
            [stddev] => Ok((0.0, stddev)),
            [mean, stddev] => Ok((mean, stddev)),
            _ => Err(Error::invalid(format!("{name} takes (mean, stddev)"))),
        };
        let kind = match name {
            "constant" => Self::Constant(args.first().copied().unwrap_or(0.0)),
            "random_normal" => {
                let (mean, stddev) = normal_args(&args)?;
                Self::RandomNormal { mean, stddev }
            }
            "truncated_normal" => {
                let (mean, stddev) = normal_args(&args)?;
                Self::TruncatedNormal { mean, stddev }
            }
            "glorot_normal" => Self::GlorotNormal,
            "glorot_uniform" => Self::GlorotUniform,
            "he_normal" => Self::HeNormal,
            "he_uniform" => Self::HeUniform,
            "lecun_normal" => Self::LecunNormal,
            "lecun_uniform" => Self::LecunUniform,
            other => return Err(Error::invalid(format!("unknown initializer {other:?}"))),
        };
        if let Self::RandomNormal { stddev, .. } | Self::TruncatedNormal { stddev, .. } = kind {
            if !(stddev > 0.0) {
                return Err(Error::invalid(format!("{name} stddev must be positive")));
            }
        }
        Ok(kind)
    }
}

impl Serialize for InitializerKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InitializerKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
