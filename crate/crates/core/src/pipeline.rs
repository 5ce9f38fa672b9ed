//! End-to-end orchestration: feature extraction, the four training phases,
//! conversion and evaluation over files on disk.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{
    log_mel_frames, pseudo_phonetic, read_wav, resample, FeatureKind, FeatureSeq, Waveform, ACOUSTIC_RATE,
    PHONETIC_RATE,
};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dvae::{train_dvae, DvaeConfig, DvaeModel, DvaeTrainOptions, TokenSeq};
use crate::error::{Error, Result};
use crate::eval::{
    compute_eer, cosine_similarity, duration_ratio, mean_and_variance, mel_l1, mel_mse, parse_trials, ReportLine, Trial, TrialSet,
};
use crate::lm::{pack, train_lm, LanguageModel, LmExample, LmHidden, LmTrainOptions, SamplingParams};
use crate::manifest::Manifest;
use crate::styleenc::StyleEmbedding;
use crate::vocoder::{interpolate_hidden, train_vocoder, VocoderExample, VocoderModel, VocoderTrainOptions};

/// Training phases in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    DvaePhonetic,
    DvaeAcoustic,
    Lm,
    Vocoder,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::DvaePhonetic, Phase::DvaeAcoustic, Phase::Lm, Phase::Vocoder];

    pub fn name(self) -> &'static str {
        match self {
            Phase::DvaePhonetic => "dvae-phonetic",
            Phase::DvaeAcoustic => "dvae-acoustic",
            Phase::Lm => "lm",
            Phase::Vocoder => "vocoder",
        }
    }

    pub fn checkpoint_path(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.gvck", self.name()))
    }

    pub fn curve_path(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.loss.csv", self.name()))
    }

    pub fn prerequisites(self) -> &'static [Phase] {
        match self {
            Phase::DvaePhonetic | Phase::DvaeAcoustic => &[],
            Phase::Lm => &[Phase::DvaePhonetic, Phase::DvaeAcoustic],
            Phase::Vocoder => &[Phase::DvaePhonetic, Phase::DvaeAcoustic, Phase::Lm],
        }
    }

    /// Per-phase stream so phases can be rerun independently with one seed.
    fn rng(self, seed: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(self as u64 + 1);
        r
    }
}

fn require(phase: Phase, dir: &Path) -> Result<()> {
    for p in phase.prerequisites() {
        let path = p.checkpoint_path(dir);
        if !path.is_file() {
            return Err(Error::Dependency {
                phase: phase.name().into(),
                path,
            });
        }
    }
    Ok(())
}

/// Reads any WAV and resamples it to 24 kHz.
pub fn load_audio(path: &Path) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() == ACOUSTIC_RATE {
        Ok(w)
    } else {
        resample(&w, ACOUSTIC_RATE)
    }
}

/// Log-mel frames of a 24 kHz waveform under the run's mel settings.
pub fn acoustic_features(w: &Waveform, cfg: &RunConfig) -> Result<FeatureSeq> {
    w.expect_rate(ACOUSTIC_RATE)?;
    let mel = cfg.mel();
    if w.len() < mel.win_length {
        return Err(Error::Length(format!(
            "{} samples is shorter than one {}-sample window",
            w.len(),
            mel.win_length
        )));
    }
    FeatureSeq::new(log_mel_frames(w.samples(), &mel), mel.frame_rate(), FeatureKind::Acoustic)
}

/// 50 Hz content features of a 24 kHz waveform.
pub fn phonetic_features(w: &Waveform, cfg: &RunConfig) -> Result<FeatureSeq> {
    pseudo_phonetic(&resample(w, PHONETIC_RATE)?, &cfg.phonetic())
}

/// One analysed utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub path: PathBuf,
    pub speaker: String,
    pub wav: Waveform,
    pub mel: FeatureSeq,
    pub phonetic: FeatureSeq,
}

impl Utterance {
    pub fn analyze(path: PathBuf, speaker: String, wav: Waveform, cfg: &RunConfig) -> Result<Self> {
        let mel = acoustic_features(&wav, cfg)?;
        let phonetic = phonetic_features(&wav, cfg)?;
        Ok(Self {
            path,
            speaker,
            wav,
            mel,
            phonetic,
        })
    }
}

/// Loads and analyses every manifest entry.
pub fn load_corpus(m: &Manifest, cfg: &RunConfig) -> Result<Vec<Utterance>> {
    m.entries
        .iter()
        .map(|e| {
            let path = m.resolve(e);
            let wav = load_audio(&path)?;
            Utterance::analyze(path, e.speaker.clone(), wav, cfg)
        })
        .collect()
}

fn save_curve(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Parse(format!("writing {}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for (step, r) in rows.enumerate() {
        let mut rec = vec![step.to_string()];
        rec.extend(r.iter().map(f64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// What a finished phase wrote.
#[derive(Debug, Clone)]
pub struct PhaseOutput {
    pub phase: Phase,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub final_loss: f64,
}

fn dvae_kind(phase: Phase) -> Option<FeatureKind> {
    match phase {
        Phase::DvaePhonetic => Some(FeatureKind::Phonetic),
        Phase::DvaeAcoustic => Some(FeatureKind::Acoustic),
        _ => None,
    }
}

pub fn load_dvae(dir: &Path, kind: FeatureKind) -> Result<DvaeModel> {
    let phase = match kind {
        FeatureKind::Phonetic => Phase::DvaePhonetic,
        FeatureKind::Acoustic => Phase::DvaeAcoustic,
    };
    DvaeModel::from_checkpoint(&Checkpoint::load(&phase.checkpoint_path(dir))?, kind)
}

pub fn load_lm(dir: &Path) -> Result<LanguageModel> {
    LanguageModel::from_checkpoint(&Checkpoint::load(&Phase::Lm.checkpoint_path(dir))?)
}

pub fn load_vocoder(dir: &Path) -> Result<VocoderModel> {
    VocoderModel::from_checkpoint(&Checkpoint::load(&Phase::Vocoder.checkpoint_path(dir))?)
}

/// Token streams of every utterance under the trained DVAEs.
pub fn tokenize_corpus(corpus: &[Utterance], dir: &Path) -> Result<Vec<LmExample>> {
    let dp = load_dvae(dir, FeatureKind::Phonetic)?;
    let da = load_dvae(dir, FeatureKind::Acoustic)?;
    corpus
        .iter()
        .map(|u| {
            Ok(LmExample {
                mel: u.mel.clone(),
                phonetic: dp.encode(&u.phonetic)?,
                acoustic: da.encode(&u.mel)?,
            })
        })
        .collect()
}

/// Longest time-aligned prefix of both streams that fits the LM context.
pub fn fit_context(lm: &LanguageModel, phonetic: &TokenSeq, acoustic: &TokenSeq) -> Result<(TokenSeq, TokenSeq)> {
    let cfg = &lm.config;
    let room = cfg.max_positions.saturating_sub(cfg.style_len + 4);
    if phonetic.len() + acoustic.len() <= room {
        return Ok((phonetic.clone(), acoustic.clone()));
    }
    let secs = room as f64 / (phonetic.rate() + acoustic.rate());
    let n = ((secs * phonetic.rate()).floor() as usize).clamp(1, phonetic.len());
    let m = ((secs * acoustic.rate()).floor() as usize).clamp(1, acoustic.len());
    Ok((phonetic.slice(0, n)?, acoustic.slice(0, m)?))
}

/// Vocoder training pairs: teacher-forced LM states (whole utterance as the
/// style prompt) interpolated to the mel rate, with the matching samples.
pub fn vocoder_examples(corpus: &[Utterance], tokens: &[LmExample], lm: &LanguageModel) -> Result<Vec<VocoderExample>> {
    corpus
        .iter()
        .zip(tokens)
        .map(|(u, ex)| {
            let style = lm.encode_style(&u.mel)?;
            let (p, a) = fit_context(lm, &ex.phonetic, &ex.acoustic)?;
            let h = lm.teacher_forced_hidden(&style, &p, &a)?;
            Ok(VocoderExample {
                cond: interpolate_hidden(&h)?,
                samples: u.wav.samples().to_vec(),
            })
        })
        .collect()
}

/// Runs one phase over an analysed corpus, writing its checkpoint and loss
/// curve into `dir`.
pub fn train_phase(phase: Phase, corpus: &[Utterance], cfg: &RunConfig, seed: u64, dir: &Path) -> Result<PhaseOutput> {
    require(phase, dir)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = phase.rng(seed);
    let ck = phase.checkpoint_path(dir);
    let curve = phase.curve_path(dir);
    let final_loss = match phase {
        Phase::DvaePhonetic | Phase::DvaeAcoustic => {
            let kind = dvae_kind(phase).expect("dvae phase");
            let (dc, feats): (DvaeConfig, Vec<FeatureSeq>) = match kind {
                FeatureKind::Phonetic => (DvaeConfig::phonetic(cfg), corpus.iter().map(|u| u.phonetic.clone()).collect()),
                FeatureKind::Acoustic => (DvaeConfig::acoustic(cfg), corpus.iter().map(|u| u.mel.clone()).collect()),
            };
            let mut model = DvaeModel::new(dc, &mut rng);
            let rep = train_dvae(&mut model, &feats, &DvaeTrainOptions::from_config(cfg), &mut rng)?;
            model.to_checkpoint(cfg).save(&ck)?;
            save_curve(
                &curve,
                &["step", "loss", "recon"],
                rep.losses.iter().zip(&rep.recon).map(|(l, r)| vec![*l, *r]),
            )?;
            rep.losses.last().copied().unwrap_or(f64::NAN)
        }
        Phase::Lm => {
            let examples = tokenize_corpus(corpus, dir)?;
            let mut lm = LanguageModel::from_run(cfg, &mut rng);
            let rep = train_lm(&mut lm, &examples, &LmTrainOptions::from_config(cfg), &mut rng)?;
            lm.to_checkpoint(cfg).save(&ck)?;
            rep.save_csv(&curve)?;
            rep.rows.last().map_or(f64::NAN, |r| r.gen)
        }
        Phase::Vocoder => {
            let examples = tokenize_corpus(corpus, dir)?;
            let lm = load_lm(dir)?;
            let data = vocoder_examples(corpus, &examples, &lm)?;
            let mut voc = VocoderModel::from_run(cfg, &mut rng);
            let rep = train_vocoder(&mut voc, &data, &VocoderTrainOptions::from_config(cfg), &mut rng)?;
            voc.to_checkpoint(cfg).save(&ck)?;
            save_curve(
                &curve,
                &["step", "loss", "mel_l1"],
                rep.losses.iter().zip(&rep.mel_l1).map(|(l, m)| vec![*l, *m]),
            )?;
            rep.losses.last().copied().unwrap_or(f64::NAN)
        }
    };
    Ok(PhaseOutput {
        phase,
        checkpoint: ck,
        curve,
        final_loss,
    })
}

/// All four phases in order.
pub fn train_all(corpus: &[Utterance], cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Vec<PhaseOutput>> {
    Phase::ALL.iter().map(|&p| train_phase(p, corpus, cfg, seed, dir)).collect()
}

/// Facts about one conversion, written next to the output audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionMeta {
    pub phonetic_tokens: usize,
    pub acoustic_tokens: usize,
    pub source_secs: f64,
    pub output_secs: f64,
    pub duration_ratio: f64,
    pub truncated: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Conversion {
    pub wav: Waveform,
    pub acoustic: TokenSeq,
    pub hidden: LmHidden,
    pub meta: ConversionMeta,
}

/// All trained components needed to convert speech.
#[derive(Debug, Clone)]
pub struct Converter {
    pub config: RunConfig,
    pub phonetic: DvaeModel,
    pub acoustic: DvaeModel,
    pub lm: LanguageModel,
    pub vocoder: VocoderModel,
}

impl Converter {
    pub fn load(dir: &Path) -> Result<Self> {
        require(Phase::Vocoder, dir)?;
        let vpath = Phase::Vocoder.checkpoint_path(dir);
        if !vpath.is_file() {
            return Err(Error::Dependency {
                phase: "convert".into(),
                path: vpath,
            });
        }
        let lm_ck = Checkpoint::load(&Phase::Lm.checkpoint_path(dir))?;
        let c = Self {
            config: lm_ck.header.config.clone(),
            phonetic: load_dvae(dir, FeatureKind::Phonetic)?,
            acoustic: load_dvae(dir, FeatureKind::Acoustic)?,
            lm: LanguageModel::from_checkpoint(&lm_ck)?,
            vocoder: load_vocoder(dir)?,
        };
        let lc = &c.lm.config;
        if c.phonetic.config.num_codes != lc.k_phonetic
            || c.acoustic.config.num_codes != lc.k_acoustic
            || c.vocoder.config.d_model != lc.d_model
        {
            return Err(Error::Checkpoint(format!(
                "checkpoints in {} were trained with different model sizes",
                dir.display()
            )));
        }
        Ok(c)
    }

    /// Replaces the run configuration used for features and sampling; model
    /// sizes must agree with the loaded checkpoints.
    pub fn with_config(mut self, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let old = &self.config;
        let same = cfg.k_phonetic == old.k_phonetic
            && cfg.k_acoustic == old.k_acoustic
            && cfg.d_model == old.d_model
            && cfg.style_latents == old.style_latents
            && cfg.mel() == old.mel()
            && cfg.phonetic() == old.phonetic()
            && cfg.vocoder_upsample == old.vocoder_upsample;
        if !same {
            return Err(Error::Checkpoint("config does not match the trained checkpoints".into()));
        }
        self.config = cfg;
        Ok(self)
    }

    pub fn style(&self, target: &Waveform) -> Result<StyleEmbedding> {
        self.lm.encode_style(&acoustic_features(target, &self.config)?)
    }

    pub fn phonetic_tokens(&self, source: &Waveform) -> Result<TokenSeq> {
        self.phonetic.encode(&phonetic_features(source, &self.config)?)
    }

    /// Source content in the target's voice. The same inputs, parameters and
    /// seed give bit-identical output.
    pub fn convert(&self, source: &Waveform, target: &Waveform, params: &SamplingParams, seed: u64) -> Result<Conversion> {
        let style = self.style(target)?;
        let phon = self.phonetic_tokens(source)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.lm.generate(&style, &phon, params, self.config.max_gen_tokens, &mut rng)?;
        if g.tokens.is_empty() {
            return Err(Error::Length("generation ended before any acoustic token".into()));
        }
        let wav = self.vocoder.vocode_hidden(&g.hidden)?;
        let meta = ConversionMeta {
            phonetic_tokens: phon.len(),
            acoustic_tokens: g.tokens.len(),
            source_secs: source.duration_secs(),
            output_secs: wav.duration_secs(),
            duration_ratio: duration_ratio(source, &wav),
            truncated: g.truncated,
            seed,
        };
        Ok(Conversion {
            wav,
            acoustic: g.tokens,
            hidden: g.hidden,
            meta,
        })
    }
}

/// Style-embedding cosine similarity between two recordings.
pub fn similarity(lm: &LanguageModel, cfg: &RunConfig, a: &Waveform, b: &Waveform) -> Result<f64> {
    let ea = lm.encode_style(&acoustic_features(a, cfg)?)?;
    let eb = lm.encode_style(&acoustic_features(b, cfg)?)?;
    cosine_similarity(ea.flatten(), eb.flatten())
}

/// EER over a trial list (`label path_a path_b` per line).
pub fn eer_report(lm: &LanguageModel, cfg: &RunConfig, trials: &Path) -> Result<Vec<ReportLine>> {
    let file = std::fs::File::open(trials).map_err(|e| Error::io(trials, e))?;
    let base = trials.parent().unwrap_or(Path::new("."));
    let specs = parse_trials(BufReader::new(file), base)?;
    let embed = |p: &Path| -> Result<Vec<f64>> {
        let w = load_audio(p)?;
        Ok(lm.encode_style(&acoustic_features(&w, cfg)?)?.flatten().to_vec())
    };
    let mut set = TrialSet::default();
    for s in &specs {
        set.trials.push(Trial {
            a: embed(&s.a)?,
            b: embed(&s.b)?,
            same_speaker: s.same_speaker,
        });
    }
    let e = compute_eer(&set)?;
    Ok(vec![
        ReportLine::new("eer", e.eer, specs.len()),
        ReportLine::new("eer_threshold", e.threshold, specs.len()),
    ])
}

/// Mean and variance of converted-over-source duration ratios for
/// `source converted` path pairs, one pair per line.
pub fn duration_report(pairs: &Path) -> Result<Vec<ReportLine>> {
    let text = std::fs::read_to_string(pairs).map_err(|e| Error::io(pairs, e))?;
    let base = pairs.parent().unwrap_or(Path::new("."));
    let mut ratios = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [src, conv] = parts[..] else {
            return Err(Error::Parse(format!("{} line {}: expected two paths", pairs.display(), i + 1)));
        };
        let s = read_wav(&base.join(src))?;
        let c = read_wav(&base.join(conv))?;
        ratios.push(duration_ratio(&s, &c));
    }
    if ratios.is_empty() {
        return Err(Error::Parse(format!("{} lists no pairs", pairs.display())));
    }
    let (mean, var) = mean_and_variance(&ratios);
    let mut lines: Vec<ReportLine> = ratios.iter().map(|&r| ReportLine::new("duration_ratio", r, 1)).collect();
    lines.push(ReportLine::new("duration_ratio_mean", mean, ratios.len()));
    lines.push(ReportLine::new("duration_ratio_variance", var, ratios.len()));
    Ok(lines)
}

/// Pooled DVAE reconstruction MSE over the corpus divided by the variance of
/// every input mel value.
pub fn reconstruction_ratio(dvae: &DvaeModel, corpus: &[Utterance]) -> Result<f64> {
    let (mut sse, mut n) = (0.0, 0usize);
    let mut values = Vec::new();
    for u in corpus {
        let rec = dvae.reconstruct(&u.mel)?;
        let rows = rec.num_frames().min(u.mel.num_frames());
        let cols = u.mel.dim();
        sse += mel_mse(u.mel.frames(), rec.frames())? * (rows * cols) as f64;
        n += rows * cols;
        values.extend_from_slice(u.mel.frames().data());
    }
    if n == 0 {
        return Err(Error::Length("empty corpus".into()));
    }
    let (_, var) = mean_and_variance(&values);
    Ok(sse / n as f64 / var)
}

/// Mean teacher-forced acoustic cross-entropy with each utterance as its own prompt.
pub fn teacher_forced_acoustic_loss(lm: &LanguageModel, corpus: &[Utterance], tokens: &[LmExample]) -> Result<f64> {
    let mut total = 0.0;
    for (u, ex) in corpus.iter().zip(tokens) {
        let (p, a) = fit_context(lm, &ex.phonetic, &ex.acoustic)?;
        let packed = pack(&lm.config, lm.encode_style(&u.mel)?, &p, &a)?;
        total += lm.evaluate(&packed)?.2;
    }
    Ok(total / corpus.len().max(1) as f64)
}

/// Mel L1 between each utterance and its conversion with itself as both
/// source and target; utterance `i` uses seed `seed + i`.
pub fn self_conversion_l1(conv: &Converter, corpus: &[Utterance], params: &SamplingParams, seed: u64) -> Result<Vec<f64>> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let c = conv.convert(&u.wav, &u.wav, params, seed + i as u64)?;
            mel_l1(u.mel.frames(), acoustic_features(&c.wav, &conv.config)?.frames())
        })
        .collect()
}

/// Mean style cosine over same-speaker pairs and over cross-speaker pairs.
pub fn style_cosines(lm: &LanguageModel, corpus: &[Utterance]) -> Result<(f64, f64)> {
    let emb = corpus
        .iter()
        .map(|u| lm.encode_style(&u.mel).map(|e| e.flatten().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let (mut same, mut cross) = (Vec::new(), Vec::new());
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let c = cosine_similarity(&emb[i], &emb[j])?;
            if corpus[i].speaker == corpus[j].speaker {
                same.push(c);
            } else {
                cross.push(c);
            }
        }
    }
    if same.is_empty() || cross.is_empty() {
        return Err(Error::Class("need several utterances from at least two speakers".into()));
    }
    Ok((mean_and_variance(&same).0, mean_and_variance(&cross).0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_prerequisites_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        for phase in [Phase::Lm, Phase::Vocoder] {
            match train_phase(phase, &[], &RunConfig::toy(), 0, dir.path()) {
                Err(Error::Dependency { phase: p, path }) => {
                    assert_eq!(p, phase.name());
                    assert_eq!(path, Phase::DvaePhonetic.checkpoint_path(dir.path()));
                }
                other => panic!("expected a dependency error, got {other:?}"),
            }
        }
        assert_eq!(Converter::load(dir.path()).unwrap_err().code(), "dependency");
    }

    #[test]
    fn phase_streams_differ() {
        use rand::Rng;
        let a: u64 = Phase::Lm.rng(7).gen();
        let b: u64 = Phase::Vocoder.rng(7).gen();
        assert_ne!(a, b);
        assert_eq!(a, Phase::Lm.rng(7).gen::<u64>());
    }

    #[test]
    fn duration_pairs_need_two_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.txt");
        std::fs::write(&p, "only_one.wav\n").unwrap();
        assert_eq!(duration_report(&p).unwrap_err().code(), "parse");
    }
}
