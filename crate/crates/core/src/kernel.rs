//! Kernel functions, gamma resolution, and an LRU cache of kernel rows.

use std::fmt;
use std::rc::Rc;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
    #[serde(alias = "polynomial")]
    Poly,
}

/// Gamma choice before it is resolved against a training matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    /// 1 / (n_features · Var[X]), variance pooled over every entry.
    Scale,
    /// 1 / n_features
    Auto,
    Fixed(f64),
}

impl Gamma {
    /// Sort key: Scale, Auto, then fixed values ascending.
    pub fn order_key(&self) -> (u8, f64) {
        match *self {
            Gamma::Scale => (0, 0.0),
            Gamma::Auto => (1, 0.0),
            Gamma::Fixed(g) => (2, g),
        }
    }
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Scale => f.write_str("scale"),
            Gamma::Auto => f.write_str("auto"),
            Gamma::Fixed(g) => write!(f, "{g}"),
        }
    }
}

impl std::str::FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "scale" => Ok(Gamma::Scale),
            "auto" => Ok(Gamma::Auto),
            other => {
                let g: f64 = other
                    .parse()
                    .map_err(|_| Error::ConfigInvalid(format!("gamma `{other}`: expected scale, auto, or a number")))?;
                if g > 0.0 && g.is_finite() {
                    Ok(Gamma::Fixed(g))
                } else {
                    Err(Error::ConfigInvalid(format!("gamma must be positive, got {g}")))
                }
            }
        }
    }
}

// "scale" | "auto" | number, matching the config file syntax.
impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Fixed(g) => s.serialize_f64(*g),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(g) => format!("{g}").parse(),
            Repr::Str(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: Gamma,
    #[serde(default)]
    pub coef0: f64,
    #[serde(default = "default_degree")]
    pub degree: u32,
}

fn default_degree() -> u32 {
    3
}

impl KernelSpec {
    pub fn rbf(gamma: Gamma) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            coef0: 0.0,
            degree: 3,
        }
    }

    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            gamma: Gamma::Scale,
            coef0: 0.0,
            degree: 3,
        }
    }

    pub fn poly(gamma: Gamma, coef0: f64, degree: u32) -> Self {
        KernelSpec {
            kind: KernelKind::Poly,
            gamma,
            coef0,
            degree,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::ConfigInvalid("kernel degree must be at least 1".into()));
        }
        if let Gamma::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::ConfigInvalid(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Resolves gamma against the training matrix. The linear kernel has no
    /// gamma and never fails here.
    pub fn resolve(&self, x: &Array2<f64>) -> Result<ResolvedKernel> {
        self.validate()?;
        let gamma = match self.kind {
            KernelKind::Linear => 0.0,
            _ => resolve_gamma(self.gamma, x)?,
        };
        Ok(ResolvedKernel {
            kind: self.kind,
            gamma,
            coef0: self.coef0,
            degree: self.degree,
        })
    }
}

/// Numeric gamma for a choice and training matrix.
pub fn resolve_gamma(gamma: Gamma, x: &Array2<f64>) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = x.ncols() as f64;
    match gamma {
        Gamma::Fixed(g) => Ok(g),
        Gamma::Auto => Ok(1.0 / d),
        Gamma::Scale => {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var == 0.0 {
                Err(Error::ZeroVariance)
            } else {
                Ok(1.0 / (d * var))
            }
        }
    }
}

/// Kernel with a numeric gamma, ready to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedKernel {
    pub kind: KernelKind,
    pub gamma: f64,
    pub coef0: f64,
    pub degree: u32,
}

impl ResolvedKernel {
    /// Evaluates without a length check; callers guarantee equal dimensions.
    #[inline]
    pub fn eval_unchecked(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Linear => a.dot(&b),
            KernelKind::Poly => (self.gamma * a.dot(&b) + self.coef0).powi(self.degree as i32),
        }
    }

    pub fn eval(&self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        Ok(self.eval_unchecked(a, b))
    }

    /// Full kernel matrix, for tests and small problems.
    pub fn matrix(&self, x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut k = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = self.eval_unchecked(x.row(i), x.row(j));
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        k
    }
}

pub fn kernel_eval(kernel: &ResolvedKernel, a: &[f64], b: &[f64]) -> Result<f64> {
    kernel.eval(ArrayView1::from(a), ArrayView1::from(b))
}

const NIL: usize = usize::MAX;

/// Bounded cache of kernel rows keyed by training index, evicting the least
/// recently used row when the byte budget would be exceeded.
///
/// Rows are handed out as `Rc<[f64]>` so a caller can hold two rows at once
/// even when the budget only fits one.
#[derive(Debug)]
pub struct KernelCache {
    capacity_bytes: usize,
    max_rows: usize,
    slots: Vec<Option<Rc<[f64]>>>,
    prev: Vec<usize>,
    next: Vec<usize>,
    head: usize,
    tail: usize,
    resident: usize,
    hits: u64,
    misses: u64,
}

impl KernelCache {
    pub fn new(n: usize, capacity_bytes: usize) -> Self {
        let row_bytes = (n * std::mem::size_of::<f64>()).max(1);
        KernelCache {
            capacity_bytes,
            max_rows: (capacity_bytes / row_bytes).min(n),
            slots: vec![None; n],
            prev: vec![NIL; n],
            next: vec![NIL; n],
            head: NIL,
            tail: NIL,
            resident: 0,
            hits: 0,
            misses: 0,
        }
    }

    pub fn with_megabytes(n: usize, mb: usize) -> Self {
        Self::new(n, mb.saturating_mul(1 << 20))
    }

    pub fn capacity_bytes(&self) -> usize {
        self.capacity_bytes
    }

    pub fn resident_rows(&self) -> usize {
        self.resident
    }

    pub fn resident_bytes(&self) -> usize {
        self.resident * self.slots.len() * std::mem::size_of::<f64>()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn contains(&self, i: usize) -> bool {
        self.slots[i].is_some()
    }

    fn unlink(&mut self, i: usize) {
        let (p, n) = (self.prev[i], self.next[i]);
        if p != NIL {
            self.next[p] = n;
        } else {
            self.head = n;
        }
        if n != NIL {
            self.prev[n] = p;
        } else {
            self.tail = p;
        }
        self.prev[i] = NIL;
        self.next[i] = NIL;
    }

    fn push_front(&mut self, i: usize) {
        self.prev[i] = NIL;
        self.next[i] = self.head;
        if self.head != NIL {
            self.prev[self.head] = i;
        }
        self.head = i;
        if self.tail == NIL {
            self.tail = i;
        }
    }

    /// Row `[K(x_i, x_j)]_j` over all training rows.
    pub fn get_row(&mut self, i: usize, x: &Array2<f64>, kernel: &ResolvedKernel) -> Rc<[f64]> {
        if let Some(row) = &self.slots[i] {
            let row = Rc::clone(row);
            self.hits += 1;
            self.unlink(i);
            self.push_front(i);
            return row;
        }
        self.misses += 1;
        let xi = x.row(i);
        let row: Rc<[f64]> = x.rows().into_iter().map(|xj| kernel.eval_unchecked(xi, xj)).collect();
        if self.max_rows == 0 {
            return row;
        }
        if self.resident == self.max_rows {
            let victim = self.tail;
            self.unlink(victim);
            self.slots[victim] = None;
            self.resident -= 1;
        }
        self.slots[i] = Some(Rc::clone(&row));
        self.resident += 1;
        self.push_front(i);
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rbf(g: f64) -> ResolvedKernel {
        ResolvedKernel {
            kind: KernelKind::Rbf,
            gamma: g,
            coef0: 0.0,
            degree: 3,
        }
    }

    #[test]
    fn kernel_values() {
        let k = rbf(0.5);
        assert_eq!(kernel_eval(&k, &[3.0, -1.0], &[3.0, -1.0]).unwrap(), 1.0);
        let v = kernel_eval(&k, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        let lin = ResolvedKernel {
            kind: KernelKind::Linear,
            ..k
        };
        assert_eq!(kernel_eval(&lin, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let poly = ResolvedKernel {
            kind: KernelKind::Poly,
            gamma: 1.0,
            coef0: 1.0,
            degree: 2,
        };
        assert_eq!(kernel_eval(&poly, &[1.0, 0.0], &[1.0, 5.0]).unwrap(), 4.0);
        assert!(matches!(kernel_eval(&k, &[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gamma_resolution() {
        // entries {0, 1, 0, 1}: pooled variance 0.25 → 1/(2·0.25)
        let x = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(resolve_gamma(Gamma::Scale, &x).unwrap(), 2.0);
        // pooled variance 0.5 → 1.0
        let x = array![[0.0, 2.0f64.sqrt()], [2.0f64.sqrt(), 0.0]];
        assert!((resolve_gamma(Gamma::Scale, &x).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(resolve_gamma(Gamma::Auto, &Array2::zeros((3, 4))).unwrap(), 0.25);
        assert_eq!(resolve_gamma(Gamma::Fixed(0.1), &x).unwrap(), 0.1);
        assert!(matches!(resolve_gamma(Gamma::Scale, &Array2::ones((3, 2))), Err(Error::ZeroVariance)));
    }

    #[test]
    fn gamma_parses_config_syntax() {
        assert_eq!("scale".parse::<Gamma>().unwrap(), Gamma::Scale);
        assert_eq!("0.1".parse::<Gamma>().unwrap(), Gamma::Fixed(0.1));
        assert!("-1".parse::<Gamma>().is_err());
        let g: Vec<Gamma> = serde_json::from_str(r#"["auto", 1, 0.1]"#).unwrap();
        assert_eq!(g, vec![Gamma::Auto, Gamma::Fixed(1.0), Gamma::Fixed(0.1)]);
        assert_eq!(serde_json::to_string(&Gamma::Scale).unwrap(), "\"scale\"");
    }

    #[test]
    fn cache_hit_on_repeat() {
        let x = array![[0.0], [1.0], [2.0]];
        let k = rbf(1.0);
        let mut c = KernelCache::new(3, 1 << 20);
        let a = c.get_row(0, &x, &k);
        let b = c.get_row(0, &x, &k);
        assert_eq!((c.hits(), c.misses()), (1, 1));
        assert_eq!(&*a, &*b);
    }

    #[test]
    fn cache_lru_with_one_row() {
        let x = array![[0.0], [1.0], [2.0]];
        let k = rbf(1.0);
        let mut c = KernelCache::new(3, 3 * 8);
        c.get_row(0, &x, &k);
        c.get_row(1, &x, &k);
        assert!(!c.contains(0));
        c.get_row(0, &x, &k);
        assert_eq!(c.misses(), 3);
        assert!(c.resident_bytes() <= c.capacity_bytes());
    }

    #[test]
    fn cache_evicts_least_recent() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let k = rbf(1.0);
        let mut c = KernelCache::new(4, 2 * 4 * 8);
        c.get_row(0, &x, &k);
        c.get_row(1, &x, &k);
        c.get_row(0, &x, &k); // 1 is now least recent
        c.get_row(2, &x, &k);
        assert!(c.contains(0) && c.contains(2) && !c.contains(1));
    }
}
