use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::ToyModel;
use super::LoraError;

/// Std of the Gaussian used for fresh `A` matrices.
pub const A_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Key,
    Value,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Query, Projection::Key, Projection::Value];

    pub fn name(self) -> &'static str {
        match self {
            Projection::Query => "query",
            Projection::Key => "key",
            Projection::Value => "value",
        }
    }
}

impl FromStr for Projection {
    type Err = LoraError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query" | "q" => Ok(Projection::Query),
            "key" | "k" => Ok(Projection::Key),
            "value" | "v" => Ok(Projection::Value),
            other => Err(LoraError::UnknownTarget(other.to_string())),
        }
    }
}

/// The three attention blocks of an encoder-decoder layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionBlock {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
}

impl AttentionBlock {
    pub const ALL: [AttentionBlock; 3] = [
        AttentionBlock::EncoderSelf,
        AttentionBlock::DecoderSelf,
        AttentionBlock::DecoderCross,
    ];

    fn prefix(self) -> (&'static str, &'static str) {
        match self {
            AttentionBlock::EncoderSelf => ("encoder", "self_attn"),
            AttentionBlock::DecoderSelf => ("decoder", "self_attn"),
            AttentionBlock::DecoderCross => ("decoder", "cross_attn"),
        }
    }
}

/// One adaptable weight matrix: a projection inside an attention block
/// of a given layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub block: AttentionBlock,
    pub layer: usize,
    pub projection: Projection,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (stack, block) = self.block.prefix();
        write!(
            f,
            "{stack}.{}.{block}.{}",
            self.layer,
            self.projection.name()
        )
    }
}

impl FromStr for Site {
    type Err = LoraError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LoraError::UnknownTarget(s.to_string());
        let parts: Vec<&str> = s.split('.').collect();
        let [stack, layer, block, proj] = parts[..] else {
            return Err(bad());
        };
        let block = AttentionBlock::ALL
            .into_iter()
            .find(|b| b.prefix() == (stack, block))
            .ok_or_else(bad)?;
        Ok(Site {
            block,
            layer: layer.parse().map_err(|_| bad())?,
            projection: proj.parse()?,
        })
    }
}

fn default_blocks() -> BTreeSet<AttentionBlock> {
    AttentionBlock::ALL.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub targets: BTreeSet<Projection>,
    /// Attention blocks whose projections are adapted.
    #[serde(default = "default_blocks")]
    pub blocks: BTreeSet<AttentionBlock>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 32.0,
            dropout: 0.1,
            targets: Projection::ALL.into_iter().collect(),
            blocks: default_blocks(),
        }
    }
}

impl LoraConfig {
    pub fn with_rank(rank: usize) -> LoraConfig {
        LoraConfig {
            rank,
            ..LoraConfig::default()
        }
    }

    /// Parses target names, rejecting anything outside key/query/value.
    pub fn with_target_names<'a>(
        mut self,
        names: impl IntoIterator<Item = &'a str>,
    ) -> Result<LoraConfig, LoraError> {
        self.targets = names
            .into_iter()
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn with_blocks(mut self, blocks: impl IntoIterator<Item = AttentionBlock>) -> LoraConfig {
        self.blocks = blocks.into_iter().collect();
        self
    }

    /// Sets `alpha = rank` so the update is the plain `A·B`.
    pub fn without_scaling(mut self) -> LoraConfig {
        self.alpha = self.rank as f64;
        self
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<(), LoraError> {
        if self.rank == 0 {
            return Err(LoraError::Config("rank must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LoraError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(LoraError::Config(format!(
                "alpha {} must be positive",
                self.alpha
            )));
        }
        if self.targets.is_empty() || self.blocks.is_empty() {
            return Err(LoraError::Config("no target projections selected".into()));
        }
        Ok(())
    }

    /// Stable digest of the fields that shape a trained adapter.
    pub fn digest(&self) -> u64 {
        let key = format!(
            "{}|{}|{}|{:?}|{:?}",
            self.rank, self.alpha, self.dropout, self.targets, self.blocks
        );
        crate::text::fnv1a64(key.as_bytes())
    }
}

/// Low-rank pair for one site, stored at `f32` as persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterMatrix {
    pub site: Site,
    /// `d × r`
    pub a: Array2<f32>,
    /// `r × k`
    pub b: Array2<f32>,
}

impl AdapterMatrix {
    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.b.ncols()
    }
}

/// A trained (or fresh) per-user adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f32,
    pub matrices: Vec<AdapterMatrix>,
    /// SHA-256 of the base model weights the adapter belongs to.
    pub base_fingerprint: [u8; 32],
}

impl LoraAdapter {
    pub fn scale(&self) -> f64 {
        f64::from(self.alpha) / self.rank as f64
    }

    pub fn param_count(&self) -> usize {
        self.matrices
            .iter()
            .map(|m| self.rank * (m.d() + m.k()))
            .sum()
    }

    pub fn is_identity(&self) -> bool {
        self.matrices.iter().all(|m| m.b.iter().all(|&x| x == 0.0))
    }

    pub fn matrix(&self, site: Site) -> Option<&AdapterMatrix> {
        self.matrices.iter().find(|m| m.site == site)
    }

    pub fn check_base(&self, base: &ToyModel) -> Result<(), LoraError> {
        if self.base_fingerprint != *base.fingerprint() {
            return Err(LoraError::WrongBaseModel);
        }
        for m in &self.matrices {
            let (d, k) = base
                .site_shape(m.site)
                .ok_or_else(|| LoraError::UnknownTarget(m.site.to_string()))?;
            if m.a.dim() != (d, self.rank) || m.b.dim() != (self.rank, k) {
                return Err(LoraError::Dimension(format!(
                    "{} expects {d}x{} and {}x{k}, found {:?} and {:?}",
                    m.site,
                    self.rank,
                    self.rank,
                    m.a.dim(),
                    m.b.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Fresh adapter: `A ~ N(0, 0.02²)`, `B = 0` on every selected site.
pub fn attach_adapters(
    base: &ToyModel,
    cfg: &LoraConfig,
    seed: u64,
) -> Result<LoraAdapter, LoraError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, A_INIT_STD).expect("valid std");
    let matrices = base
        .sites()
        .into_iter()
        .filter(|s| cfg.targets.contains(&s.projection) && cfg.blocks.contains(&s.block))
        .map(|site| {
            let (d, k) = base.site_shape(site).expect("site from model");
            let a = Array2::from_shape_simple_fn((d, cfg.rank), || normal.sample(&mut rng) as f32);
            AdapterMatrix {
                site,
                a,
                b: Array2::zeros((cfg.rank, k)),
            }
        })
        .collect::<Vec<_>>();
    if matrices.is_empty() {
        return Err(LoraError::Config(
            "selected blocks do not exist in the base model".into(),
        ));
    }
    Ok(LoraAdapter {
        rank: cfg.rank,
        alpha: cfg.alpha as f32,
        matrices,
        base_fingerprint: *base.fingerprint(),
    })
}

/// `W0 + (alpha / r) · A·B`.
pub fn merge_weights(
    w0: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    alpha: f64,
    r: usize,
) -> Result<Array2<f64>, LoraError> {
    if r == 0
        || a.ncols() != r
        || b.nrows() != r
        || a.nrows() != w0.nrows()
        || b.ncols() != w0.ncols()
    {
        return Err(LoraError::Dimension(format!(
            "W0 {:?}, A {:?}, B {:?}, r {r}",
            w0.dim(),
            a.dim(),
            b.dim()
        )));
    }
    Ok(w0 + &(a.dot(b) * (alpha / r as f64)))
}

/// Trainable parameters of an attached adapter: `Σ r·(d + k)`.
pub fn trainable_param_count(adapter: Option<&LoraAdapter>) -> usize {
    adapter.map_or(0, LoraAdapter::param_count)
}
