//! Value-level kernels shared by the tape and by inference code.

use super::Tensor;
use crate::error::{Error, Result};

/// Positions excluded from a softmax. `true` means masked.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    /// One flag per column, shared by every row.
    Cols(Vec<bool>),
    /// Row `i` may only see columns `0..=i + offset`.
    Causal { offset: usize },
    /// Column flags combined with causal visibility.
    CausalCols { cols: Vec<bool>, offset: usize },
}

impl Mask {
    #[inline]
    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        match self {
            Mask::Cols(c) => c[col],
            Mask::Causal { offset } => col > row + offset,
            Mask::CausalCols { cols, offset } => cols[col] || col > row + offset,
        }
    }

    fn check(&self, cols: usize) -> Result<()> {
        match self {
            Mask::Cols(c) | Mask::CausalCols { cols: c, .. } if c.len() != cols => Err(
                Error::shape("mask", format!("{} flags for {cols} columns", c.len())),
            ),
            _ => Ok(()),
        }
    }
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    softmax_masked(x, None)
}

pub fn softmax_masked(x: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax"));
    }
    let (r, c) = x.dims2();
    if let Some(m) = mask {
        m.check(c)?;
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &x.data()[i * c..(i + 1) * c];
        let o = &mut out[i * c..(i + 1) * c];
        let visible = |j: usize| mask.is_none_or(|m| !m.is_masked(i, j));
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if visible(j) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::AllMasked);
        }
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if visible(j) {
                let e = (v - max).exp();
                o[j] = e;
                sum += e;
            }
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::NonFinite("log_softmax"));
    }
    let (r, c) = x.dims2();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let lse = log_sum_exp(row);
        for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy targets: class indices (with `None` rows ignored) or full
/// distributions, one row per logit row.
#[derive(Debug, Clone)]
pub enum Targets {
    Index(Vec<Option<usize>>),
    Dist(Tensor),
}

impl Targets {
    pub fn indices(ids: &[usize]) -> Self {
        Targets::Index(ids.iter().map(|&i| Some(i)).collect())
    }

    pub(crate) fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        match self {
            Targets::Index(ids) => {
                if ids.len() != rows {
                    return Err(Error::shape(
                        "cross_entropy",
                        format!("{} targets for {rows} rows", ids.len()),
                    ));
                }
                if let Some(bad) = ids.iter().flatten().find(|&&t| t >= cols) {
                    return Err(Error::shape(
                        "cross_entropy",
                        format!("target {bad} out of range for {cols} classes"),
                    ));
                }
                Ok(())
            }
            Targets::Dist(t) => {
                if t.dims2() != (rows, cols) {
                    return Err(Error::shape(
                        "cross_entropy",
                        format!("targets {:?} vs logits {rows}x{cols}", t.shape()),
                    ));
                }
                for i in 0..rows {
                    let s: f64 = t.row(i).iter().sum();
                    if (s - 1.0).abs() > 1e-6 || t.row(i).iter().any(|&v| v < 0.0) {
                        return Err(Error::invalid(format!(
                            "target row {i} is not a distribution (sum {s})"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Rows that contribute to the mean.
    pub(crate) fn active_rows(&self, rows: usize) -> usize {
        match self {
            Targets::Index(ids) => ids.iter().filter(|t| t.is_some()).count(),
            Targets::Dist(_) => rows,
        }
    }
}

/// Mean over active rows of `-Σ target · log softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, targets: &Targets) -> Result<f64> {
    let (r, c) = logits.dims2();
    targets.validate(r, c)?;
    let logp = log_softmax(logits)?;
    let mut total = 0.0;
    match targets {
        Targets::Index(ids) => {
            for (i, t) in ids.iter().enumerate() {
                if let Some(t) = t {
                    total -= logp.get2(i, *t);
                }
            }
        }
        Targets::Dist(t) => {
            for (tv, lv) in t.data().iter().zip(logp.data()) {
                if *tv > 0.0 {
                    total -= tv * lv;
                }
            }
        }
    }
    let n = targets.active_rows(r);
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_hand_values() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);

        let s = softmax(&Tensor::vector(vec![2f64.ln(), 0.0])).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);

        let s = softmax(&Tensor::vector(vec![-1000.0, 0.0])).unwrap();
        assert!(s.is_finite());
        assert!(s.data()[0] < 1e-300);
        assert_eq!(s.data()[1], 1.0);
    }

    #[test]
    fn softmax_rejects_nan() {
        let err = softmax(&Tensor::vector(vec![f64::NAN, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let x = Tensor::vector(vec![5.0, 1.0, 1.0]);
        let s = softmax_masked(&x, Some(&Mask::Cols(vec![true, false, false]))).unwrap();
        assert_eq!(s.data(), &[0.0, 0.5, 0.5]);
        let err = softmax_masked(&x, Some(&Mask::Cols(vec![true; 3]))).unwrap_err();
        assert!(matches!(err, Error::AllMasked));
    }

    #[test]
    fn cross_entropy_uniform_one_hot_is_ln_classes() {
        let logits = Tensor::matrix(1, 4, vec![0.3; 4]).unwrap();
        let ce = cross_entropy(&logits, &Targets::indices(&[2])).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_with_log_target_is_entropy() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let logits = Tensor::matrix(1, 4, p.iter().map(|v: &f64| v.ln()).collect()).unwrap();
        let target = Tensor::matrix(1, 4, p.to_vec()).unwrap();
        let ce = cross_entropy(&logits, &Targets::Dist(target)).unwrap();
        let entropy: f64 = -p.iter().map(|v| v * v.ln()).sum::<f64>();
        assert!((ce - entropy).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let logits = Tensor::randn(&[3, 5], 1.5, &mut rng);
        let raw = Tensor::randn(&[3, 5], 1.0, &mut rng).map(f64::exp);
        let mut rows = Vec::new();
        for i in 0..3 {
            let s: f64 = raw.row(i).iter().sum();
            rows.push(raw.row(i).iter().map(|v| v / s).collect::<Vec<_>>());
        }
        let target = Tensor::from_rows(&rows).unwrap();
        let got = cross_entropy(&logits, &Targets::Dist(target)).unwrap();

        // naive: explicit exp / sum / log per entry
        let mut naive = 0.0;
        for (i, trow) in rows.iter().enumerate() {
            let z: f64 = logits.row(i).iter().map(|v| v.exp()).sum();
            for j in 0..5 {
                naive -= trow[j] * (logits.get2(i, j).exp() / z).ln();
            }
        }
        naive /= 3.0;
        assert!((got - naive).abs() < 1e-12, "{got} vs {naive}");
    }

    #[test]
    fn cross_entropy_shape_mismatch() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(cross_entropy(&logits, &Targets::indices(&[0])).is_err());
        assert!(cross_entropy(&logits, &Targets::indices(&[0, 3])).is_err());
        assert!(cross_entropy(&logits, &Targets::Dist(Tensor::zeros(&[3, 3]))).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(
            rows in 1usize..6,
            cols in 1usize..9,
            seed in any::<u64>(),
            scale in 0.0f64..500.0,
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::randn(&[rows, cols], scale, &mut rng);
            let s = softmax(&x).unwrap();
            for i in 0..rows {
                let row = s.row(i);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
