//! Similarity scoring, equal error rate and duration statistics.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::numerics::NdArray;

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Similarity("cosine of a zero or non-finite vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub same_speaker: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    /// Cosine scores split into `(genuine, impostor)`.
    pub fn scores(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Vec::new();
        let mut i = Vec::new();
        for t in &self.trials {
            let s = cosine_similarity(&t.a, &t.b)?;
            if t.same_speaker {
                g.push(s);
            } else {
                i.push(s);
            }
        }
        Ok((g, i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub count: usize,
}

impl SimilarityReport {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Length("no similarity scores".into()));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(Self {
            count: scores.len(),
            scores,
            mean,
        })
    }
}

/// Equal error rate of a trial set scored by cosine similarity.
pub fn compute_eer(t: &TrialSet) -> Result<Eer> {
    let (g, i) = t.scores()?;
    eer_from_scores(&g, &i)
}

/// Sweeps the acceptance threshold (`score >= threshold` accepts) over `-inf`,
/// every midpoint between consecutive distinct scores, and `+inf`; the EER is
/// read where false acceptance and false rejection cross, interpolating
/// linearly between the two bracketing operating points.
pub fn eer_from_scores(genuine: &[f64], impostor: &[f64]) -> Result<Eer> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Class(format!(
            "{} genuine and {} impostor trials",
            genuine.len(),
            impostor.len()
        )));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite trial score".into()));
    }
    let mut all: Vec<(f64, bool)> = genuine
        .iter()
        .map(|&s| (s, true))
        .chain(impostor.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);

    // operating points in order of increasing threshold
    let mut points = vec![(f64::NEG_INFINITY, 1.0, 0.0)];
    let (mut rejected_g, mut rejected_i) = (0usize, 0usize);
    let mut k = 0;
    while k < all.len() {
        let s = all[k].0;
        while k < all.len() && all[k].0 == s {
            if all[k].1 {
                rejected_g += 1;
            } else {
                rejected_i += 1;
            }
            k += 1;
        }
        let theta = if k < all.len() {
            (s + all[k].0) / 2.0
        } else {
            f64::INFINITY
        };
        let far = (impostor.len() - rejected_i) as f64 / ni;
        let frr = rejected_g as f64 / ng;
        points.push((theta, far, frr));
    }
    Ok(crossing(&points))
}

/// EER from `(threshold, far, frr)` points sorted by threshold.
pub(crate) fn crossing(points: &[(f64, f64, f64)]) -> Eer {
    for w in points.windows(2) {
        let (t0, a0, r0) = w[0];
        let (t1, a1, r1) = w[1];
        let d0 = a0 - r0;
        let d1 = a1 - r1;
        if d0 == 0.0 {
            return Eer { eer: a0, threshold: t0 };
        }
        if d0 > 0.0 && d1 < 0.0 {
            let f = d0 / (d0 - d1);
            let threshold = if t0.is_finite() && t1.is_finite() {
                t0 + f * (t1 - t0)
            } else if t0.is_finite() {
                t0
            } else {
                t1
            };
            return Eer {
                eer: a0 + f * (a1 - a0),
                threshold,
            };
        }
    }
    let &(t, a, _) = points.last().expect("nonempty");
    Eer { eer: a, threshold: t }
}

/// Mean absolute difference per bin over the frames both spectrograms share.
pub fn mel_l1(a: &NdArray, b: &NdArray) -> Result<f64> {
    let (rows, cols) = overlap(a, b)?;
    let sum: f64 = (0..rows)
        .flat_map(|i| a.row(i)[..cols].iter().zip(&b.row(i)[..cols]))
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / (rows * cols) as f64)
}

/// Mean squared difference per bin over the shared frames.
pub fn mel_mse(a: &NdArray, b: &NdArray) -> Result<f64> {
    let (rows, cols) = overlap(a, b)?;
    let sum: f64 = (0..rows)
        .flat_map(|i| a.row(i)[..cols].iter().zip(&b.row(i)[..cols]))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / (rows * cols) as f64)
}

fn overlap(a: &NdArray, b: &NdArray) -> Result<(usize, usize)> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.cols() {
        return Err(Error::Dimension(format!("spectrograms {:?} and {:?}", a.shape(), b.shape())));
    }
    let rows = a.rows().min(b.rows());
    if rows == 0 || a.cols() == 0 {
        return Err(Error::Length("no shared frames".into()));
    }
    Ok((rows, a.cols()))
}

/// Converted duration over source duration.
pub fn duration_ratio(source: &Waveform, converted: &Waveform) -> f64 {
    converted.duration_secs() / source.duration_secs()
}

/// Mean and unbiased sample variance.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// One line of a JSON-lines report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportLine {
    pub metric: String,
    pub value: f64,
    pub count: usize,
}

impl ReportLine {
    pub fn new(metric: impl Into<String>, value: f64, count: usize) -> Self {
        Self {
            metric: metric.into(),
            value,
            count,
        }
    }
}

pub fn write_report(lines: &[ReportLine], mut out: impl Write) -> Result<()> {
    for l in lines {
        let s = serde_json::to_string(l).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(out, "{s}").map_err(|e| Error::Parse(format!("writing report: {e}")))?;
    }
    Ok(())
}

pub fn save_report(lines: &[ReportLine], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_report(lines, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// One `label path_a path_b` line of a trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub same_speaker: bool,
    pub a: PathBuf,
    pub b: PathBuf,
}

/// Parses a trial list. Labels: `1`/`target`/`same` and `0`/`nontarget`/`different`;
/// blank lines and `#` comments are skipped; relative paths resolve against `base`.
pub fn parse_trials(input: impl BufRead, base: &Path) -> Result<Vec<TrialSpec>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("reading trials: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse(format!("trial line {}: expected `label path_a path_b`", n + 1)));
        }
        let same_speaker = match fields[0].to_ascii_lowercase().as_str() {
            "1" | "target" | "same" => true,
            "0" | "nontarget" | "different" => false,
            other => return Err(Error::Parse(format!("trial line {}: label `{other}`", n + 1))),
        };
        out.push(TrialSpec {
            same_speaker,
            a: base.join(fields[1]),
            b: base.join(fields[2]),
        });
    }
    if out.is_empty() {
        return Err(Error::Class("empty trial set".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0, 1.0], &[0.3, -2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::Similarity(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer_from_scores(&[0.9, 0.8], &[0.1, 0.2]).unwrap().eer, 0.0);
        assert_eq!(eer_from_scores(&[0.3, 0.7, 0.7], &[0.7, 0.3, 0.7]).unwrap().eer, 0.5);
        let e = eer_from_scores(&[0.9, 0.8, 0.4], &[0.6, 0.2, 0.1]).unwrap();
        assert!((e.eer - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(eer_from_scores(&[0.5], &[]), Err(Error::Class(_))));
    }

    #[test]
    fn interpolated_crossing() {
        // FAR 1/2 -> 0 while FRR 0 -> 1/3 across one threshold step
        let e = eer_from_scores(&[0.9, 0.9, 0.5], &[0.5, 0.1]).unwrap();
        assert!(e.eer > 0.0 && e.eer < 0.5);
    }

    #[test]
    fn trial_file_parsing() {
        let text = "# header\n1 a.wav b.wav\n\nnontarget a.wav c.wav\n";
        let t = parse_trials(text.as_bytes(), Path::new("/data")).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t[0].same_speaker && !t[1].same_speaker);
        assert_eq!(t[1].b, PathBuf::from("/data/c.wav"));
        assert!(parse_trials("maybe a b\n".as_bytes(), Path::new(".")).is_err());
        assert!(matches!(parse_trials("".as_bytes(), Path::new(".")), Err(Error::Class(_))));
    }

    #[test]
    fn report_lines_are_json() {
        let mut buf = Vec::new();
        write_report(&[ReportLine::new("eer", 0.25, 8)], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "{\"metric\":\"eer\",\"value\":0.25,\"count\":8}\n");
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 5),
            b in proptest::collection::vec(-10.0f64..10.0, 5),
            lambda in 0.01f64..100.0,
        ) {
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let scaled: Vec<f64> = a.iter().map(|x| lambda * x).collect();
            let c1 = cosine_similarity(&a, &b).unwrap();
            let c2 = cosine_similarity(&scaled, &b).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-7);
        }

        #[test]
        fn eer_invariant_under_monotone_transform(
            g in proptest::collection::vec(-3.0f64..3.0, 1..12),
            i in proptest::collection::vec(-3.0f64..3.0, 1..12),
        ) {
            let e = eer_from_scores(&g, &i).unwrap().eer;
            let f = |s: &f64| (s * 1.7).exp() + 0.5 * s;
            let g2: Vec<f64> = g.iter().map(f).collect();
            let i2: Vec<f64> = i.iter().map(f).collect();
            prop_assert_eq!(eer_from_scores(&g2, &i2).unwrap().eer, e);
        }

        #[test]
        fn eer_symmetric_under_negation_and_label_swap(
            g in proptest::collection::vec(-3.0f64..3.0, 1..12),
            i in proptest::collection::vec(-3.0f64..3.0, 1..12),
        ) {
            let e = eer_from_scores(&g, &i).unwrap().eer;
            let ng: Vec<f64> = g.iter().map(|s| -s).collect();
            let ni: Vec<f64> = i.iter().map(|s| -s).collect();
            let swapped = eer_from_scores(&ni, &ng).unwrap().eer;
            prop_assert!((swapped - e).abs() < 1e-12, "{} vs {}", e, swapped);
        }
    }
}
