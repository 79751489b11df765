//! Diagonal diffusion tensors on the unit square.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    /// Smooth periodic field with period `epsilon` in both directions.
    Oscillatory { epsilon: f64 },
    /// Piecewise constant on a `blocks_per_side²` partition; `a11`/`a22` are
    /// row-major over blocks (block `by * blocks_per_side + bx`).
    BlockRandom {
        seed: u64,
        blocks_per_side: usize,
        lo: f64,
        hi: f64,
        a11: Vec<f64>,
        a22: Vec<f64>,
    },
    Constant { value: f64 },
}

/// A diagonal tensor field `scale * diag(a11(x), a22(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    kind: FieldKind,
    scale: f64,
    alpha: f64,
    beta: f64,
}

/// The scalar `c(x)` of the oscillatory example.
pub fn eval_oscillatory(x: [f64; 2], epsilon: f64) -> f64 {
    let t1 = 2.0 * PI * x[0] / epsilon;
    let t2 = 2.0 * PI * x[1] / epsilon;
    oscillatory_phase(t1, t2)
}

fn oscillatory_phase(t1: f64, t2: f64) -> f64 {
    let s1 = t1.sin();
    (2.0 + 1.8 * s1) / (2.0 + 1.8 * t2.cos()) + (2.0 + t2.sin()) / (2.0 + 1.8 * s1)
}

/// Extremes of `c` over one period: a 1024² phase lattice, then a local
/// pattern search from the best lattice point so the bounds are sharp.
fn oscillatory_extremes() -> (f64, f64) {
    const LATTICE: usize = 1024;
    let step = 2.0 * PI / LATTICE as f64;
    let mut best_lo = (f64::INFINITY, 0.0, 0.0);
    let mut best_hi = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..LATTICE {
        for j in 0..LATTICE {
            let (t1, t2) = (i as f64 * step, j as f64 * step);
            let v = oscillatory_phase(t1, t2);
            if v < best_lo.0 {
                best_lo = (v, t1, t2);
            }
            if v > best_hi.0 {
                best_hi = (v, t1, t2);
            }
        }
    }
    let refine = |start: (f64, f64, f64), sign: f64| {
        let (mut v, mut t1, mut t2) = start;
        let mut h = step;
        for _ in 0..80 {
            let (mut bv, mut b1, mut b2) = (v, t1, t2);
            for di in -2..=2 {
                for dj in -2..=2 {
                    let c1 = t1 + di as f64 * h;
                    let c2 = t2 + dj as f64 * h;
                    let cv = oscillatory_phase(c1, c2);
                    if sign * cv > sign * bv {
                        (bv, b1, b2) = (cv, c1, c2);
                    }
                }
            }
            (v, t1, t2) = (bv, b1, b2);
            h *= 0.5;
        }
        v
    };
    (refine(best_lo, -1.0), refine(best_hi, 1.0))
}

/// splitmix64 stream: `state += golden gamma`, then the standard mix.
struct SplitMix64(u64);

impl SplitMix64 {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl CoefficientField {
    pub fn oscillatory(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidField(format!("period must be positive, got {epsilon}")));
        }
        let (alpha, beta) = oscillatory_extremes();
        Ok(Self {
            kind: FieldKind::Oscillatory { epsilon },
            scale: 1.0,
            alpha,
            beta,
        })
    }

    /// Independent log-uniform block values on `[lo, hi]`: all `a11` values
    /// are drawn first, then all `a22` values.
    pub fn block_random(seed: u64, blocks_per_side: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) {
            return Err(Error::InvalidField(format!("lower bound must be positive, got {lo}")));
        }
        if !(hi >= lo) || !hi.is_finite() {
            return Err(Error::InvalidField(format!("need lo <= hi, got [{lo}, {hi}]")));
        }
        if blocks_per_side == 0 {
            return Err(Error::InvalidField("blocks_per_side must be at least 1".into()));
        }
        let count = blocks_per_side * blocks_per_side;
        let mut rng = SplitMix64(seed);
        let ratio = hi / lo;
        let mut draw = || (lo * ratio.powf(rng.next_f64())).clamp(lo, hi);
        let a11: Vec<f64> = (0..count).map(|_| draw()).collect();
        let a22: Vec<f64> = (0..count).map(|_| draw()).collect();
        Self::from_blocks(seed, blocks_per_side, lo, hi, a11, a22)
    }

    fn from_blocks(
        seed: u64,
        blocks_per_side: usize,
        lo: f64,
        hi: f64,
        a11: Vec<f64>,
        a22: Vec<f64>,
    ) -> Result<Self> {
        let count = blocks_per_side * blocks_per_side;
        if a11.len() != count || a22.len() != count {
            return Err(Error::InvalidField(format!(
                "expected {count} block values, got {} and {}",
                a11.len(),
                a22.len()
            )));
        }
        let all = a11.iter().chain(&a22);
        let alpha = all.clone().fold(f64::INFINITY, |m, &v| m.min(v));
        let beta = all.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if !(alpha > 0.0) {
            return Err(Error::InvalidField("block values must be positive".into()));
        }
        Ok(Self {
            kind: FieldKind::BlockRandom {
                seed,
                blocks_per_side,
                lo,
                hi,
                a11,
                a22,
            },
            scale: 1.0,
            alpha,
            beta,
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidField(format!("constant must be positive, got {value}")));
        }
        Ok(Self {
            kind: FieldKind::Constant { value },
            scale: 1.0,
            alpha: value,
            beta: value,
        })
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The same field multiplied by `tau > 0`.
    pub fn scaled(&self, tau: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            scale: self.scale * tau,
            alpha: self.alpha * tau,
            beta: self.beta * tau,
        }
    }

    /// Diagonal entries `(a11, a22)` at `x`.
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        match &self.kind {
            FieldKind::Oscillatory { epsilon } => {
                let c = self.scale * eval_oscillatory(x, *epsilon);
                [c, c]
            }
            FieldKind::BlockRandom {
                blocks_per_side,
                a11,
                a22,
                ..
            } => {
                let b = *blocks_per_side;
                let bx = ((x[0] * b as f64) as usize).min(b - 1);
                let by = ((x[1] * b as f64) as usize).min(b - 1);
                let k = by * b + bx;
                [self.scale * a11[k], self.scale * a22[k]]
            }
            FieldKind::Constant { value } => [self.scale * value; 2],
        }
    }

    /// Lower and upper bounds `(α, β)` of the diagonal entries.
    pub fn bounds(&self) -> (f64, f64) {
        (self.alpha, self.beta)
    }

    /// Short label used in reports: the period, the seed or the value.
    pub fn label(&self) -> String {
        match &self.kind {
            FieldKind::Oscillatory { epsilon } => format!("{epsilon}"),
            FieldKind::BlockRandom { seed, .. } => format!("{seed}"),
            FieldKind::Constant { value } => format!("{value}"),
        }
    }

    /// Column text format: `#`-prefixed `key=value` header lines, then a
    /// `block,a11,a22` table (one row per block; a single row for a constant
    /// field, none for the oscillatory field).
    pub fn to_columns(&self) -> String {
        let mut out = String::new();
        match &self.kind {
            FieldKind::Oscillatory { epsilon } => {
                writeln!(out, "# kind=oscillatory").unwrap();
                writeln!(out, "# epsilon={epsilon}").unwrap();
            }
            FieldKind::BlockRandom {
                seed,
                blocks_per_side,
                lo,
                hi,
                ..
            } => {
                writeln!(out, "# kind=block_random").unwrap();
                writeln!(out, "# seed={seed}").unwrap();
                writeln!(out, "# blocks_per_side={blocks_per_side}").unwrap();
                writeln!(out, "# lo={lo}").unwrap();
                writeln!(out, "# hi={hi}").unwrap();
            }
            FieldKind::Constant { .. } => writeln!(out, "# kind=constant").unwrap(),
        }
        writeln!(out, "# scale={}", self.scale).unwrap();
        writeln!(out, "block,a11,a22").unwrap();
        match &self.kind {
            FieldKind::BlockRandom { a11, a22, .. } => {
                for (k, (u, v)) in a11.iter().zip(a22).enumerate() {
                    writeln!(out, "{k},{u},{v}").unwrap();
                }
            }
            FieldKind::Constant { value } => writeln!(out, "0,{value},{value}").unwrap(),
            FieldKind::Oscillatory { .. } => {}
        }
        out
    }

    pub fn from_columns(text: &str) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
            } else if !seen_header {
                if line != "block,a11,a22" {
                    return Err(Error::Parse(format!("expected column header, got `{line}`")));
                }
                seen_header = true;
            } else {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(Error::Parse(format!("bad row `{line}`")));
                }
                let k: usize = f[0].parse().map_err(|_| Error::Parse(line.into()))?;
                if k != rows.len() {
                    return Err(Error::Parse(format!("block {k} out of order")));
                }
                let a: f64 = f[1].parse().map_err(|_| Error::Parse(line.into()))?;
                let b: f64 = f[2].parse().map_err(|_| Error::Parse(line.into()))?;
                rows.push((a, b));
            }
        }
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Parse(format!("missing `{k}` in field header")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse(format!("bad value for `{k}`")))
        };
        let scale = num("scale")?;
        let field = match get("kind")?.as_str() {
            "oscillatory" => Self::oscillatory(num("epsilon")?)?,
            "constant" => {
                let (a, _) = rows
                    .first()
                    .ok_or_else(|| Error::Parse("constant field without a value row".into()))?;
                Self::constant(*a)?
            }
            "block_random" => {
                let seed: u64 = get("seed")?
                    .parse()
                    .map_err(|_| Error::Parse("bad seed".into()))?;
                let b: usize = get("blocks_per_side")?
                    .parse()
                    .map_err(|_| Error::Parse("bad blocks_per_side".into()))?;
                let (a11, a22) = rows.into_iter().unzip();
                Self::from_blocks(seed, b, num("lo")?, num("hi")?, a11, a22)?
            }
            other => return Err(Error::Parse(format!("unknown field kind `{other}`"))),
        };
        Ok(field.scaled(scale))
    }
}
