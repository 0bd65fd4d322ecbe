//! Per-symbol receiver features.
//!
//! A symbol window is split into 8 contiguous bins; each bin is averaged and
//! the 7 adjacent differences give the rates of change. The SVM consumes a
//! 19-dimensional vector (bin means, their mean/variance, diffs, their
//! mean/variance) and the recurrent detector a 15-dimensional one (bin means
//! and diffs only).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const N_BINS: usize = 8;
pub const N_DIFFS: usize = N_BINS - 1;
pub const SVM_DIM: usize = 19;
pub const RNN_DIM: usize = 15;

/// Column names of the 19-dimensional feature layout, in order.
pub const FEATURE_COLUMNS: [&str; SVM_DIM] = [
    "bin0", "bin1", "bin2", "bin3", "bin4", "bin5", "bin6", "bin7", "binmean", "binvar", "d0", "d1", "d2",
    "d3", "d4", "d5", "d6", "dmean", "dvar",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bin_means: [f64; N_BINS],
    pub diffs: [f64; N_DIFFS],
    /// (mean, population variance) of `bin_means`.
    pub bin_mean_stat: (f64, f64),
    /// (mean, population variance) of `diffs`.
    pub diff_stat: (f64, f64),
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Splits `window` into 8 bins of `len / 8` samples (the remainder goes to the
/// last bin) and derives the bin means, differences and summary statistics.
pub fn bin_features(window: &[f64]) -> Result<FeatureVector> {
    if window.len() < N_BINS {
        return Err(Error::WindowTooShort(window.len()));
    }
    let width = window.len() / N_BINS;
    let mut bin_means = [0.0; N_BINS];
    for (i, m) in bin_means.iter_mut().enumerate() {
        let start = i * width;
        let end = if i == N_BINS - 1 {
            window.len()
        } else {
            start + width
        };
        let bin = &window[start..end];
        *m = bin.iter().sum::<f64>() / bin.len() as f64;
    }
    let mut diffs = [0.0; N_DIFFS];
    for (i, d) in diffs.iter_mut().enumerate() {
        *d = bin_means[i + 1] - bin_means[i];
    }
    Ok(FeatureVector {
        bin_means,
        diffs,
        bin_mean_stat: mean_var(&bin_means),
        diff_stat: mean_var(&diffs),
    })
}

/// `[bin_means, mean, var, diffs, diff mean, diff var]`.
pub fn svm_features(fv: &FeatureVector) -> [f64; SVM_DIM] {
    let mut out = [0.0; SVM_DIM];
    out[..8].copy_from_slice(&fv.bin_means);
    out[8] = fv.bin_mean_stat.0;
    out[9] = fv.bin_mean_stat.1;
    out[10..17].copy_from_slice(&fv.diffs);
    out[17] = fv.diff_stat.0;
    out[18] = fv.diff_stat.1;
    out
}

/// `[bin_means, diffs]`.
pub fn rnn_features(fv: &FeatureVector) -> [f64; RNN_DIM] {
    let mut out = [0.0; RNN_DIM];
    out[..8].copy_from_slice(&fv.bin_means);
    out[8..].copy_from_slice(&fv.diffs);
    out
}

/// Writes a feature matrix as CSV with the stable column header.
pub fn write_feature_csv<W: std::io::Write>(mut w: W, rows: &[FeatureVector]) -> Result<()> {
    writeln!(w, "{}", FEATURE_COLUMNS.join(","))?;
    for fv in rows {
        let line: Vec<String> = svm_features(fv).iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent split-and-average used as an oracle.
    fn oracle_bin_means(w: &[f64]) -> Vec<f64> {
        let width = w.len() / 8;
        let mut bins: Vec<Vec<f64>> = vec![Vec::new(); 8];
        for (i, &x) in w.iter().enumerate() {
            let b = (i / width).min(7);
            bins[b].push(x);
        }
        bins.iter()
            .map(|b| b.iter().sum::<f64>() / b.len() as f64)
            .collect()
    }

    #[test]
    fn constant_window() {
        let fv = bin_features(&[7.0; 50]).unwrap();
        assert_eq!(fv.bin_means, [7.0; 8]);
        assert_eq!(fv.diffs, [0.0; 7]);
        assert_eq!(fv.bin_mean_stat, (7.0, 0.0));
        assert_eq!(fv.diff_stat, (0.0, 0.0));
        let s = svm_features(&fv);
        assert_eq!(
            s,
            [7., 7., 7., 7., 7., 7., 7., 7., 7., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.]
        );
        assert_eq!(
            rnn_features(&fv),
            [7., 7., 7., 7., 7., 7., 7., 7., 0., 0., 0., 0., 0., 0., 0.]
        );
    }

    #[test]
    fn ramp_window() {
        let w: Vec<f64> = (0..16).map(f64::from).collect();
        let fv = bin_features(&w).unwrap();
        assert_eq!(fv.bin_means, [0.5, 2.5, 4.5, 6.5, 8.5, 10.5, 12.5, 14.5]);
        assert_eq!(fv.diffs, [2.0; 7]);
        // population variance of the 8 means: mean 7.5, squared deviations
        // 49+25+9+1+1+9+25+49 = 168, / 8 = 21
        let s = svm_features(&fv);
        assert_eq!(&s[..8], &fv.bin_means);
        assert_eq!(s[8], 7.5);
        assert!((s[9] - 21.0).abs() < 1e-12);
        assert_eq!(&s[10..17], &[2.0; 7]);
        assert_eq!(s[17], 2.0);
        assert_eq!(s[18], 0.0);
        let r = rnn_features(&fv);
        assert_eq!(&r[..8], &fv.bin_means);
        assert_eq!(&r[8..], &[2.0; 7]);
    }

    #[test]
    fn short_window_rejected() {
        assert!(matches!(bin_features(&[1.0; 7]), Err(Error::WindowTooShort(7))));
    }

    #[test]
    fn remainder_goes_to_last_bin() {
        // 10 samples: bins of 1, last bin holds samples 7..10
        let w: Vec<f64> = (0..10).map(f64::from).collect();
        let fv = bin_features(&w).unwrap();
        assert_eq!(fv.bin_means[6], 6.0);
        assert_eq!(fv.bin_means[7], 8.0);
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &[bin_features(&[7.0; 8]).unwrap()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "bin0,bin1,bin2,bin3,bin4,bin5,bin6,bin7,binmean,binvar,d0,d1,d2,d3,d4,d5,d6,dmean,dvar"
        );
        assert!(lines.next().unwrap().starts_with("7.000000,"));
    }

    proptest! {
        #[test]
        fn matches_split_and_average(w in prop::collection::vec(-14.0f64..14.0, 8..120)) {
            let fv = bin_features(&w).unwrap();
            let want = oracle_bin_means(&w);
            for (a, b) in fv.bin_means.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for i in 0..7 {
                prop_assert_eq!(fv.diffs[i], fv.bin_means[i + 1] - fv.bin_means[i]);
            }
            prop_assert!(fv.bin_mean_stat.1 >= 0.0 && fv.diff_stat.1 >= 0.0);
            prop_assert_eq!(svm_features(&fv).len(), 19);
            prop_assert_eq!(rnn_features(&fv).len(), 15);
        }

        #[test]
        fn offset_shifts_means_only(w in prop::collection::vec(0.0f64..14.0, 8..80), k in -5.0f64..5.0) {
            let a = bin_features(&w).unwrap();
            let shifted: Vec<f64> = w.iter().map(|x| x + k).collect();
            let b = bin_features(&shifted).unwrap();
            for i in 0..8 {
                prop_assert!((b.bin_means[i] - a.bin_means[i] - k).abs() < 1e-9);
            }
            for i in 0..7 {
                prop_assert!((b.diffs[i] - a.diffs[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn scale_equivariant(w in prop::collection::vec(0.0f64..14.0, 8..80), s in 0.1f64..4.0) {
            let a = svm_features(&bin_features(&w).unwrap());
            let scaled: Vec<f64> = w.iter().map(|x| x * s).collect();
            let b = svm_features(&bin_features(&scaled).unwrap());
            for i in 0..19 {
                let factor = if i == 9 || i == 18 { s * s } else { s };
                prop_assert!((b[i] - a[i] * factor).abs() < 1e-8 * (1.0 + a[i].abs() * factor));
            }
        }
    }
}
