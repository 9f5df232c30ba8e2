//! Hyperparameter search spaces and uniform sampling over them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SERVER_LR: &str = "server_lr";
pub const BETA1: &str = "beta1";
pub const BETA2: &str = "beta2";
pub const LR_DECAY: &str = "lr_decay";
pub const CLIENT_LR: &str = "client_lr";
pub const MOMENTUM: &str = "momentum";
pub const WEIGHT_DECAY: &str = "weight_decay";
pub const BATCH_SIZE: &str = "batch_size";
pub const EPOCHS: &str = "epochs";

/// A single hyperparameter value. Integers stay integers on disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Int(i64),
    Real(f64),
}

impl HpValue {
    pub fn as_f64(self) -> f64 {
        match self {
            HpValue::Int(i) => i as f64,
            HpValue::Real(x) => x,
        }
    }
}

impl fmt::Display for HpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HpValue::Int(i) => write!(f, "{i}"),
            HpValue::Real(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionKind {
    /// `10^u` with `u ~ Unif[lo_exp, hi_exp]`.
    LogUniform { lo_exp: f64, hi_exp: f64 },
    Uniform { lo: f64, hi: f64 },
    Categorical { values: Vec<HpValue> },
    Fixed { value: HpValue },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimensionKind,
}

impl Dimension {
    pub fn new(name: impl Into<String>, kind: DimensionKind) -> Result<Self> {
        let dim = Dimension {
            name: name.into(),
            kind,
        };
        dim.validate()?;
        Ok(dim)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpace(format!("{}: {msg}", self.name)));
        match &self.kind {
            DimensionKind::LogUniform { lo_exp, hi_exp } if !(lo_exp < hi_exp) => {
                bad("log-uniform bounds must satisfy lo_exp < hi_exp")
            }
            DimensionKind::Uniform { lo, hi } if !(lo < hi) => {
                bad("uniform bounds must satisfy lo < hi")
            }
            DimensionKind::Categorical { values } if values.is_empty() => {
                bad("categorical dimension needs at least one value")
            }
            _ => Ok(()),
        }
    }

    /// True for the dimensions that carry a continuous coordinate.
    pub fn is_continuous(&self) -> bool {
        matches!(
            self.kind,
            DimensionKind::LogUniform { .. } | DimensionKind::Uniform { .. }
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HpValue {
        match &self.kind {
            DimensionKind::LogUniform { lo_exp, hi_exp } => {
                HpValue::Real(10f64.powf(rng.random_range(*lo_exp..*hi_exp)))
            }
            DimensionKind::Uniform { lo, hi } => HpValue::Real(rng.random_range(*lo..*hi)),
            DimensionKind::Categorical { values } => values[rng.random_range(0..values.len())],
            DimensionKind::Fixed { value } => *value,
        }
    }

    /// Maps a continuous value into `[0, 1]` (log10 scale for log-uniform dims).
    pub fn to_unit(&self, value: HpValue) -> Option<f64> {
        let x = value.as_f64();
        match self.kind {
            DimensionKind::LogUniform { lo_exp, hi_exp } => {
                Some((x.log10() - lo_exp) / (hi_exp - lo_exp))
            }
            DimensionKind::Uniform { lo, hi } => Some((x - lo) / (hi - lo)),
            _ => None,
        }
    }

    /// Inverse of [`Dimension::to_unit`].
    pub fn from_unit(&self, u: f64) -> Option<HpValue> {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DimensionKind::LogUniform { lo_exp, hi_exp } => {
                Some(HpValue::Real(10f64.powf(lo_exp + u * (hi_exp - lo_exp))))
            }
            DimensionKind::Uniform { lo, hi } => Some(HpValue::Real(lo + u * (hi - lo))),
            _ => None,
        }
    }

    pub fn contains(&self, value: HpValue) -> bool {
        match &self.kind {
            DimensionKind::LogUniform { lo_exp, hi_exp } => {
                let e = value.as_f64().log10();
                // exponentiation round-trips within a few ulps
                e >= lo_exp - 1e-12 && e <= hi_exp + 1e-12
            }
            DimensionKind::Uniform { lo, hi } => {
                let x = value.as_f64();
                x >= *lo && x <= *hi
            }
            DimensionKind::Categorical { values } => values.contains(&value),
            DimensionKind::Fixed { value: v } => *v == value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &dimensions {
            d.validate()?;
            if !seen.insert(d.name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate dimension {}", d.name)));
            }
        }
        Ok(SearchSpace { dimensions })
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    /// Continuous dimensions, in declaration order.
    pub fn continuous(&self) -> impl Iterator<Item = &Dimension> {
        self.dimensions.iter().filter(|d| d.is_continuous())
    }

    /// Draws every dimension independently.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HpConfig {
        let values = self
            .dimensions
            .iter()
            .map(|d| (d.name.clone(), d.sample(rng)))
            .collect();
        HpConfig { values }
    }

    pub fn validate(&self, config: &HpConfig) -> Result<()> {
        if config.values.len() != self.dimensions.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} values, got {}",
                self.dimensions.len(),
                config.values.len()
            )));
        }
        for d in &self.dimensions {
            match config.values.get(&d.name) {
                None => return Err(Error::InvalidConfig(format!("missing {}", d.name))),
                Some(&v) if !d.contains(v) => {
                    return Err(Error::InvalidConfig(format!("{} = {v} out of bounds", d.name)))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Unit-cube coordinates of a config's continuous dimensions.
    pub fn unit_coords(&self, config: &HpConfig) -> Vec<f64> {
        self.continuous()
            .map(|d| {
                config
                    .get(&d.name)
                    .and_then(|v| d.to_unit(v))
                    .unwrap_or(f64::NAN)
            })
            .collect()
    }
}

/// The server FedAdam + client SGD space.
pub fn default_space() -> SearchSpace {
    use DimensionKind::*;
    let dims = vec![
        (SERVER_LR, LogUniform { lo_exp: -6.0, hi_exp: -1.0 }),
        (BETA1, Uniform { lo: 0.0, hi: 0.9 }),
        (BETA2, Uniform { lo: 0.0, hi: 0.999 }),
        (LR_DECAY, Fixed { value: HpValue::Real(0.9999) }),
        (CLIENT_LR, LogUniform { lo_exp: -6.0, hi_exp: 0.0 }),
        (MOMENTUM, Uniform { lo: 0.0, hi: 0.9 }),
        (WEIGHT_DECAY, Fixed { value: HpValue::Real(0.00005) }),
        (
            BATCH_SIZE,
            Categorical {
                values: vec![HpValue::Int(32), HpValue::Int(64), HpValue::Int(128)],
            },
        ),
        (EPOCHS, Fixed { value: HpValue::Int(1) }),
    ];
    SearchSpace::new(
        dims.into_iter()
            .map(|(name, kind)| Dimension {
                name: name.to_string(),
                kind,
            })
            .collect(),
    )
    .expect("default space is valid")
}

/// log10 of the geometric midpoint of every nested server-lr range.
pub const NESTED_SERVER_LR_CENTER_EXP: f64 = -4.0;

/// Default space with the server learning rate narrowed to `width` decades
/// around `10^NESTED_SERVER_LR_CENTER_EXP` (width 1 is `[1e-4.5, 1e-3.5]`,
/// width 4 is `[1e-6, 1e-2]`).
pub fn nested_server_lr_space(width: u32) -> Result<SearchSpace> {
    if !(1..=4).contains(&width) {
        return Err(Error::InvalidArgument(format!(
            "nested server-lr width must be in 1..=4, got {width}"
        )));
    }
    let half = width as f64 / 2.0;
    let mut space = default_space();
    for d in &mut space.dimensions {
        if d.name == SERVER_LR {
            d.kind = DimensionKind::LogUniform {
                lo_exp: NESTED_SERVER_LR_CENTER_EXP - half,
                hi_exp: NESTED_SERVER_LR_CENTER_EXP + half,
            };
        }
    }
    Ok(space)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HpConfig {
    values: BTreeMap<String, HpValue>,
}

impl HpConfig {
    pub fn from_values(values: impl IntoIterator<Item = (String, HpValue)>) -> Self {
        HpConfig {
            values: values.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<HpValue> {
        self.values.get(name).copied()
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        self.get(name)
            .map(HpValue::as_f64)
            .ok_or_else(|| Error::InvalidConfig(format!("missing {name}")))
    }

    pub fn set(&mut self, name: impl Into<String>, value: HpValue) {
        self.values.insert(name.into(), value);
    }

    pub fn with(mut self, name: &str, value: HpValue) -> Self {
        self.set(name, value);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, HpValue)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Writes configs as JSON-lines, one flat object per line.
pub fn write_configs<W: Write>(mut out: W, configs: &[HpConfig]) -> Result<()> {
    for c in configs {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_configs<R: BufRead>(input: R) -> Result<Vec<HpConfig>> {
    let mut configs = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        configs.push(serde_json::from_str(&line)?);
    }
    Ok(configs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    #[test]
    fn default_space_listing() {
        let space = default_space();
        assert_eq!(space.dimensions().len(), 9);
        assert_eq!(
            space.dimension(LR_DECAY).unwrap().kind,
            DimensionKind::Fixed { value: HpValue::Real(0.9999) }
        );
        assert_eq!(
            space.dimension(WEIGHT_DECAY).unwrap().kind,
            DimensionKind::Fixed { value: HpValue::Real(0.00005) }
        );
        assert_eq!(
            space.dimension(BATCH_SIZE).unwrap().kind,
            DimensionKind::Categorical {
                values: vec![HpValue::Int(32), HpValue::Int(64), HpValue::Int(128)]
            }
        );
        assert_eq!(space.continuous().count(), 5);
    }

    #[test]
    fn draws_respect_bounds_and_fixed_values() {
        let space = default_space();
        let mut rng = seed::rng(1);
        for _ in 0..2000 {
            let c = space.sample(&mut rng);
            let lr = c.real(SERVER_LR).unwrap();
            assert!((1e-6..=1e-1).contains(&lr));
            assert_eq!(c.get(EPOCHS), Some(HpValue::Int(1)));
            space.validate(&c).unwrap();
        }
    }

    #[test]
    fn beta1_draws_pass_ks_against_uniform() {
        let space = default_space();
        let mut rng = seed::rng(2024);
        let mut xs: Vec<f64> = (0..10_000)
            .map(|_| space.sample(&mut rng).real(BETA1).unwrap() / 0.9)
            .collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn nested_widths() {
        let range = |w| match nested_server_lr_space(w).unwrap().dimension(SERVER_LR).unwrap().kind {
            DimensionKind::LogUniform { lo_exp, hi_exp } => (lo_exp, hi_exp),
            _ => unreachable!(),
        };
        assert_eq!(range(1), (-4.5, -3.5));
        assert_eq!(range(4), (-6.0, -2.0));
        for w in 1..=4 {
            let (lo, hi) = range(w);
            assert_eq!((lo + hi) / 2.0, NESTED_SERVER_LR_CENTER_EXP);
            assert_eq!(hi - lo, w as f64);
            if w > 1 {
                let (plo, phi) = range(w - 1);
                assert!(lo < plo && hi > phi);
            }
        }
        assert!(nested_server_lr_space(0).is_err());
        assert!(nested_server_lr_space(5).is_err());
        let nested = nested_server_lr_space(2).unwrap();
        let base = default_space();
        for d in base.dimensions().iter().filter(|d| d.name != SERVER_LR) {
            assert_eq!(nested.dimension(&d.name), Some(d));
        }
    }

    #[test]
    fn invalid_spaces_rejected() {
        let dup = vec![
            Dimension::new("a", DimensionKind::Uniform { lo: 0.0, hi: 1.0 }).unwrap(),
            Dimension::new("a", DimensionKind::Uniform { lo: 0.0, hi: 1.0 }).unwrap(),
        ];
        assert!(SearchSpace::new(dup).is_err());
        assert!(Dimension::new("b", DimensionKind::Uniform { lo: 1.0, hi: 1.0 }).is_err());
        assert!(Dimension::new("c", DimensionKind::LogUniform { lo_exp: 0.0, hi_exp: -1.0 }).is_err());
        assert!(Dimension::new("d", DimensionKind::Categorical { values: vec![] }).is_err());
    }

    #[test]
    fn config_pool_jsonl_keys_are_dimension_names() {
        let space = default_space();
        let mut rng = seed::rng(3);
        let pool: Vec<_> = (0..4).map(|_| space.sample(&mut rng)).collect();
        let mut buf = Vec::new();
        write_configs(&mut buf, &pool).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        let mut names: Vec<_> = space.dimensions().iter().map(|d| d.name.clone()).collect();
        names.sort();
        assert_eq!(keys, names);
        assert!(first["batch_size"].as_i64().is_some());
        assert_eq!(read_configs(&buf[..]).unwrap(), pool);
    }

    proptest! {
        #[test]
        fn sampling_is_reproducible_and_valid(s in any::<u64>(), width in 1u32..=4) {
            let space = nested_server_lr_space(width).unwrap();
            let a: Vec<_> = { let mut r = seed::rng(s); (0..8).map(|_| space.sample(&mut r)).collect() };
            let b: Vec<_> = { let mut r = seed::rng(s); (0..8).map(|_| space.sample(&mut r)).collect() };
            prop_assert_eq!(&a, &b);
            for c in &a {
                prop_assert!(space.validate(c).is_ok());
            }
        }
    }
}
