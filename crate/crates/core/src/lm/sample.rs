use rand::Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::softmax_into;

/// Cumulative-mass slack for the nucleus cut so that a prefix whose exact mass
/// equals `top_p` is not lost to rounding.
const NUCLEUS_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    /// Clamped to the vocabulary size.
    pub top_k: usize,
    pub top_p: f64,
    pub repetition_penalty: f64,
    /// Multiplies the end-token logit during generation; 1.0 leaves it as is.
    pub length_penalty: f64,
}

impl SamplingParams {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            temperature: cfg.temperature,
            top_k: cfg.top_k,
            top_p: cfg.top_p,
            repetition_penalty: cfg.repetition_penalty,
            length_penalty: cfg.length_penalty,
        }
    }

    /// Plain temperature sampling over a vocabulary of `v`.
    pub fn unfiltered(temperature: f64, v: usize) -> Self {
        Self {
            temperature,
            top_k: v,
            top_p: 1.0,
            repetition_penalty: 1.0,
            length_penalty: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if self.top_k == 0 || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top_k {} / top_p {} out of range",
                self.top_k, self.top_p
            )));
        }
        if !(self.repetition_penalty >= 1.0) {
            return Err(Error::Config(format!(
                "repetition penalty {} < 1",
                self.repetition_penalty
            )));
        }
        Ok(())
    }
}

/// Divides positive and multiplies negative logits of every id seen in
/// `history` by `penalty` (each id once).
pub fn apply_repetition_penalty(logits: &mut [f64], history: &[usize], penalty: f64) {
    let mut seen = vec![false; logits.len()];
    for &id in history {
        if id < logits.len() && !seen[id] {
            seen[id] = true;
            let l = &mut logits[id];
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
}

/// The filtered, renormalized distribution `sample_next` draws from.
/// Logits of `-inf` are excluded outright.
pub fn sampling_distribution(logits: &[f64], history: &[usize], p: &SamplingParams) -> Result<Vec<f64>> {
    p.validate()?;
    let v = logits.len();
    if v == 0 {
        return Err(Error::Length("empty logit vector".into()));
    }
    let mut l = logits.to_vec();
    apply_repetition_penalty(&mut l, history, p.repetition_penalty);
    for x in l.iter_mut() {
        *x /= p.temperature;
    }
    let mut order: Vec<usize> = (0..v).filter(|&i| l[i] > f64::NEG_INFINITY).collect();
    if order.is_empty() {
        return Err(Error::Internal("every token is masked".into()));
    }
    // descending by logit, lower index first among ties
    order.sort_by(|&a, &b| l[b].total_cmp(&l[a]).then(a.cmp(&b)));
    order.truncate(p.top_k.min(order.len()));

    let kept: Vec<f64> = order.iter().map(|&i| l[i]).collect();
    let mut probs = vec![0.0; kept.len()];
    softmax_into(&kept, &mut probs);
    let mut cum = 0.0;
    let mut cut = probs.len();
    for (j, q) in probs.iter().enumerate() {
        cum += q;
        if cum >= p.top_p - NUCLEUS_SLACK {
            cut = j + 1;
            break;
        }
    }
    let mass: f64 = probs[..cut].iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Internal("nucleus filter removed every token".into()));
    }
    let mut out = vec![0.0; v];
    for (&i, q) in order[..cut].iter().zip(&probs[..cut]) {
        out[i] = q / mass;
    }
    Ok(out)
}

/// Draws one id after repetition penalty, temperature, top-k and top-p.
pub fn sample_next(
    logits: &[f64],
    history: &[usize],
    p: &SamplingParams,
    rng: &mut impl Rng,
) -> Result<usize> {
    let dist = sampling_distribution(logits, history, p)?;
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &q) in dist.iter().enumerate() {
        if q > 0.0 {
            cum += q;
            last = i;
            if u < cum {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_k_one_is_argmax() {
        let p = SamplingParams {
            top_k: 1,
            ..SamplingParams::unfiltered(1.0, 5)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_next(&[0.1, 2.0, 1.9, -3.0, 0.0], &[], &p, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn nucleus_renormalization_example() {
        let logits: Vec<f64> = [0.5f64, 0.3, 0.15, 0.05].iter().map(|q| q.ln()).collect();
        let p = SamplingParams {
            top_k: 4,
            top_p: 0.8,
            ..SamplingParams::unfiltered(1.0, 4)
        };
        let d = sampling_distribution(&logits, &[], &p).unwrap();
        let want = [0.625, 0.375, 0.0, 0.0];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{d:?}");
        }
    }

    #[test]
    fn repetition_penalty_example() {
        let p = SamplingParams {
            repetition_penalty: 2.0,
            ..SamplingParams::unfiltered(0.7, 2)
        };
        let d = sampling_distribution(&[2.0, 2.0], &[0], &p).unwrap();
        let mut want = [0.0; 2];
        softmax_into(&[1.0 / 0.7, 2.0 / 0.7], &mut want);
        assert!((d[0] - want[0]).abs() < 1e-12 && (d[1] - want[1]).abs() < 1e-12);

        let mut l = [3.0, -1.0, 0.5];
        apply_repetition_penalty(&mut l, &[1, 0, 1, 1], 2.0);
        assert_eq!(l, [1.5, -2.0, 0.5]);
    }

    #[test]
    fn masked_tokens_never_drawn() {
        let p = SamplingParams::unfiltered(1.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let id = sample_next(&[0.0, f64::NEG_INFINITY, 0.0], &[], &p, &mut rng).unwrap();
            assert_ne!(id, 1);
        }
        assert!(sampling_distribution(&[f64::NEG_INFINITY; 2], &[], &p).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = SamplingParams::unfiltered(0.0, 3);
        assert!(sampling_distribution(&[0.0; 3], &[], &p).is_err());
        p.temperature = 1.0;
        p.top_p = 0.0;
        assert!(sampling_distribution(&[0.0; 3], &[], &p).is_err());
        p.top_p = 1.0;
        p.repetition_penalty = 0.5;
        assert!(sampling_distribution(&[0.0; 3], &[], &p).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let p = SamplingParams {
            top_k: 15,
            top_p: 0.85,
            temperature: 0.85,
            repetition_penalty: 2.0,
            length_penalty: 1.0,
        };
        let logits: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut hist = Vec::new();
            for _ in 0..30 {
                let id = sample_next(&logits, &hist, &p, &mut rng).unwrap();
                hist.push(id);
            }
            hist
        };
        assert_eq!(draw(9), draw(9));
    }
}
