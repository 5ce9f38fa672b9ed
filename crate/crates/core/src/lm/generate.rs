use rand::Rng;

use super::model::{packed_ids, LanguageModel};
use super::sample::{sample_next, SamplingParams};
use crate::dvae::{TokenKind, TokenSeq, ACOUSTIC_TOKEN_RATE};
use crate::error::{Error, Result};
use crate::numerics::{NdArray, Tape};
use crate::styleenc::StyleEmbedding;

/// Final-layer states at the input positions of `a_1..a_m`, one row per
/// acoustic token.
#[derive(Debug, Clone, PartialEq)]
pub struct LmHidden {
    data: Vec<f64>,
    d_model: usize,
}

impl LmHidden {
    pub fn new(data: Vec<f64>, d_model: usize) -> Result<Self> {
        if d_model == 0 || data.len() % d_model != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of {d_model}",
                data.len()
            )));
        }
        Ok(Self { data, d_model })
    }

    pub fn from_array(a: &NdArray) -> Self {
        Self {
            data: a.data().to_vec(),
            d_model: a.cols(),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.d_model
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d_model..(i + 1) * self.d_model]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `[m, d_model]`; errors when there are no rows.
    pub fn to_array(&self) -> Result<NdArray> {
        if self.is_empty() {
            return Err(Error::Length("no hidden states".into()));
        }
        NdArray::new(&[self.rows(), self.d_model], self.data.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: TokenSeq,
    pub hidden: LmHidden,
    /// The budget ran out before the end token was drawn.
    pub truncated: bool,
}

impl LanguageModel {
    /// Next-token acoustic logits after `[style; phonetic; acoustic]`, plus the
    /// final-layer state of every acoustic input position.
    fn step(&self, style: &NdArray, phon: &[usize], acou: &[usize]) -> Result<(Vec<f64>, NdArray)> {
        let mut tape = Tape::new();
        let s = tape.constant(style.clone());
        let tr = self.trunk(&mut tape, s, phon, acou)?;
        let start = self.config.style_len + phon.len();
        let ha = tape.slice_rows(tr.hidden, start, acou.len())?;
        let last = tape.slice_rows(ha, acou.len() - 1, 1)?;
        let logits = self.acoustic_logits(&mut tape, last)?;
        Ok((tape.value(logits).data().to_vec(), tape.value(ha).clone()))
    }

    /// Samples acoustic tokens until the end token or `max_len` tokens.
    pub fn generate(
        &self,
        style: &StyleEmbedding,
        phonetic: &TokenSeq,
        params: &SamplingParams,
        max_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Generation> {
        params.validate()?;
        let cfg = &self.config;
        let rate = ACOUSTIC_TOKEN_RATE;
        let empty = TokenSeq::new(vec![], cfg.k_acoustic, rate, TokenKind::Acoustic)?;
        let (phon, _) = packed_ids(cfg, phonetic, &empty)?;
        // room for style, phonetic segment and a_s .. a_m, a_e
        let budget = cfg
            .max_positions
            .saturating_sub(cfg.style_len + phon.len() + 2)
            .min(max_len);
        let mut acou = vec![cfg.a_start()];
        let mut hidden = None;
        let mut finished = false;
        for _ in 0..budget {
            let (mut logits, h) = self.step(style.matrix(), &phon, &acou)?;
            hidden = Some(h);
            logits[cfg.a_start()] = f64::NEG_INFINITY;
            logits[cfg.a_end()] *= params.length_penalty;
            let id = sample_next(&logits, &acou[1..], params, rng)?;
            if id == cfg.a_end() {
                finished = true;
                break;
            }
            acou.push(id);
        }
        let m = acou.len() - 1;
        if !finished && m > 0 {
            // states for the last drawn token come from one more pass
            hidden = Some(self.step(style.matrix(), &phon, &acou)?.1);
        }
        let hidden = match (m, hidden) {
            (0, _) | (_, None) => LmHidden::new(vec![], cfg.d_model)?,
            (_, Some(h)) => LmHidden::new(h.data()[cfg.d_model..].to_vec(), cfg.d_model)?,
        };
        Ok(Generation {
            tokens: TokenSeq::new(acou[1..].to_vec(), cfg.k_acoustic, rate, TokenKind::Acoustic)?,
            hidden,
            truncated: !finished,
        })
    }

    /// States at the positions of ground-truth acoustic tokens under teacher forcing.
    pub fn teacher_forced_hidden(
        &self,
        style: &StyleEmbedding,
        phonetic: &TokenSeq,
        acoustic: &TokenSeq,
    ) -> Result<LmHidden> {
        if acoustic.is_empty() {
            return Err(Error::Length("no acoustic tokens to teacher-force".into()));
        }
        let (phon, acou) = packed_ids(&self.config, phonetic, acoustic)?;
        let mut tape = Tape::new();
        let s = tape.constant(style.matrix().clone());
        let tr = self.trunk(&mut tape, s, &phon, &acou)?;
        let start = self.config.style_len + phon.len() + 1;
        let h = tape.slice_rows(tr.hidden, start, acoustic.len())?;
        Ok(LmHidden::from_array(tape.value(h)))
    }
}
