//! Two-alternative forced-choice "which one is real" test harness.
//!
//! A trial pairs a training portrait with a generated one, both downsampled
//! to one of a few log-spaced sizes. Accuracy per size, with Wilson score
//! intervals, gives a detection curve per generator; chance is 0.5.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facespace::{FaceSpaceError, ImageSampler};
use crate::imagecore::{content_hash, lanczos_resample, Image, ImageError, ResampleSpec};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959963984540054;

/// Attempts at drawing a generated image that differs from the real one.
const MAX_DRAWS: usize = 16;

#[derive(Debug, Error)]
pub enum TuringError {
    #[error("invalid size range: {0}")]
    InvalidRange(String),
    #[error("empty {0}")]
    EmptyPool(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown trial {0}")]
    UnknownTrial(String),
    #[error("response to {0} disagrees with its trial")]
    InconsistentResponse(String),
    #[error("generator {0} keeps reproducing the real image")]
    DuplicateImage(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Sampler(#[from] FaceSpaceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TuringError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuringConfig {
    pub min_side: usize,
    pub max_side: usize,
    pub steps: usize,
    pub per_size: usize,
    /// Question shown above each pair.
    pub prompt: String,
}

impl Default for TuringConfig {
    fn default() -> Self {
        Self {
            min_side: 16,
            max_side: 64,
            steps: 4,
            per_size: 10,
            prompt: "Which image is the real photograph?".into(),
        }
    }
}

impl TuringConfig {
    pub fn ladder(&self) -> Result<Vec<usize>> {
        size_ladder(self.min_side, self.max_side, self.steps)
    }
}

/// `steps` geometrically spaced sides from `min_side` to `max_side`,
/// rounded half up.
pub fn size_ladder(min_side: usize, max_side: usize, steps: usize) -> Result<Vec<usize>> {
    if min_side == 0 || min_side >= max_side {
        return Err(TuringError::InvalidRange(format!("{min_side}..{max_side}")));
    }
    if steps < 2 {
        return Err(TuringError::InvalidRange(format!("{steps} steps")));
    }
    let ratio = max_side as f64 / min_side as f64;
    let last = steps - 1;
    let ladder: Vec<usize> = (0..steps)
        .map(|k| match k {
            0 => min_side,
            _ if k == last => max_side,
            _ => (min_side as f64 * ratio.powf(k as f64 / last as f64) + 0.5).floor() as usize,
        })
        .collect();
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TuringError::InvalidRange(format!(
            "{steps} steps collide between {min_side} and {max_side}: {ladder:?}"
        )));
    }
    Ok(ladder)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: String,
    pub size: usize,
    pub real_image_id: String,
    pub synth_image_id: String,
    /// Label of the generator that produced the synthetic image.
    pub synth_source: String,
    pub left_is_real: bool,
}

impl TrialSpec {
    /// Image ids in display order.
    pub fn left_right(&self) -> (&str, &str) {
        if self.left_is_real {
            (&self.real_image_id, &self.synth_image_id)
        } else {
            (&self.synth_image_id, &self.real_image_id)
        }
    }
}

/// Trials plus every image they reference, keyed by content hash.
#[derive(Clone, Debug, Default)]
pub struct SessionTrials {
    pub trials: Vec<TrialSpec>,
    pub images: BTreeMap<String, Image>,
}

/// `per_size` trials for each ladder size in shuffled order. Each pairs a
/// uniformly drawn real portrait with a sample from a uniformly drawn
/// generator; both are Lanczos-downsampled to the trial size.
pub fn make_session_trials<R: Rng>(
    real_pool: &[Image],
    generators: &[&dyn ImageSampler],
    per_size: usize,
    ladder: &[usize],
    rng: &mut R,
) -> Result<SessionTrials> {
    if real_pool.is_empty() {
        return Err(TuringError::EmptyPool("real image pool"));
    }
    if generators.is_empty() {
        return Err(TuringError::EmptyPool("generator list"));
    }
    if ladder.is_empty() || ladder.contains(&0) {
        return Err(TuringError::InvalidArgument(format!("size ladder {ladder:?}")));
    }

    let mut out = SessionTrials::default();
    let mut real_cache: HashMap<(usize, usize), String> = HashMap::new();
    let mut trials = Vec::with_capacity(per_size * ladder.len());
    for &size in ladder {
        let spec = ResampleSpec::square(size);
        for _ in 0..per_size {
            let ri = rng.random_range(0..real_pool.len());
            let real_id = match real_cache.get(&(ri, size)) {
                Some(id) => id.clone(),
                None => {
                    let img = lanczos_resample(&real_pool[ri], spec)?;
                    let id = content_hash(&img);
                    out.images.insert(id.clone(), img);
                    real_cache.insert((ri, size), id.clone());
                    id
                }
            };
            let generator = generators[rng.random_range(0..generators.len())];
            let mut synth = None;
            for _ in 0..MAX_DRAWS {
                let img = lanczos_resample(&generator.sample(rng)?, spec)?;
                let id = content_hash(&img);
                if id != real_id {
                    synth = Some((id, img));
                    break;
                }
            }
            let (synth_id, img) =
                synth.ok_or_else(|| TuringError::DuplicateImage(generator.label().to_string()))?;
            out.images.insert(synth_id.clone(), img);
            trials.push(TrialSpec {
                trial_id: String::new(),
                size,
                real_image_id: real_id,
                synth_image_id: synth_id,
                synth_source: generator.label().to_string(),
                left_is_real: rng.random_bool(0.5),
            });
        }
    }
    trials.shuffle(rng);
    for (i, t) in trials.iter_mut().enumerate() {
        t.trial_id = format!("trial-{i:03}");
    }
    out.trials = trials;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub trial_id: String,
    pub participant_id: String,
    pub chose_left: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

impl Response {
    pub fn new(
        trial: &TrialSpec,
        participant_id: impl Into<String>,
        chose_left: bool,
        latency_ms: Option<u64>,
    ) -> Self {
        Self {
            trial_id: trial.trial_id.clone(),
            participant_id: participant_id.into(),
            chose_left,
            correct: chose_left == trial.left_is_real,
            latency_ms,
        }
    }

    pub fn is_consistent_with(&self, trial: &TrialSpec) -> bool {
        self.trial_id == trial.trial_id && self.correct == (self.chose_left == trial.left_is_real)
    }
}

/// Wilson score interval for `k` successes out of `n` at the given
/// standard normal quantile.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    // The exact interval always contains p; rounding can nudge it outside.
    ((center - half).clamp(0.0, p), (center + half).clamp(p, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: usize,
    pub n_trials: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl CurvePoint {
    pub fn from_counts(size: usize, n_correct: usize, n_trials: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(n_correct, n_trials, Z_95);
        Self {
            size,
            n_trials,
            n_correct,
            accuracy: n_correct as f64 / n_trials as f64,
            ci_low,
            ci_high,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionCurve {
    pub generator: String,
    pub points: Vec<CurvePoint>,
}

impl DetectionCurve {
    pub const CHANCE: f64 = 0.5;
}

/// Accuracy per size over responses to trials from generator `by`.
/// Sizes without responses are left out.
pub fn detection_curve(responses: &[Response], trials: &[TrialSpec], by: &str) -> Result<DetectionCurve> {
    let index: HashMap<&str, &TrialSpec> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in responses {
        let trial = index
            .get(r.trial_id.as_str())
            .ok_or_else(|| TuringError::UnknownTrial(r.trial_id.clone()))?;
        if !r.is_consistent_with(trial) {
            return Err(TuringError::InconsistentResponse(r.trial_id.clone()));
        }
        if trial.synth_source != by {
            continue;
        }
        let entry = counts.entry(trial.size).or_default();
        entry.0 += usize::from(r.correct);
        entry.1 += 1;
    }
    Ok(DetectionCurve {
        generator: by.to_string(),
        points: counts
            .into_iter()
            .map(|(size, (k, n))| CurvePoint::from_counts(size, k, n))
            .collect(),
    })
}

/// One curve per generator appearing in `trials`, sorted by label. Curves
/// without any responses are omitted.
pub fn detection_curves(responses: &[Response], trials: &[TrialSpec]) -> Result<Vec<DetectionCurve>> {
    let labels: BTreeSet<&str> = trials.iter().map(|t| t.synth_source.as_str()).collect();
    let mut curves = Vec::new();
    for label in labels {
        let curve = detection_curve(responses, trials, label)?;
        if !curve.points.is_empty() {
            curves.push(curve);
        }
    }
    Ok(curves)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    generator: &'a str,
    size: usize,
    n_trials: usize,
    n_correct: usize,
    accuracy: f64,
    ci_low: f64,
    ci_high: f64,
}

pub fn write_curves_csv<W: Write>(curves: &[DetectionCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        for p in &c.points {
            w.serialize(CsvRow {
                generator: &c.generator,
                size: p.size,
                n_trials: p.n_trials,
                n_correct: p.n_correct,
                accuracy: p.accuracy,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Answers each trial correctly with probability `p(size)`.
pub struct SimulatedObserver {
    psychometric: Box<dyn Fn(usize) -> f64 + Send + Sync>,
}

impl SimulatedObserver {
    pub fn new(psychometric: impl Fn(usize) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            psychometric: Box::new(psychometric),
        }
    }

    pub fn constant(p: f64) -> Result<Self> {
        check_probability(p)?;
        Ok(Self::new(move |_| p))
    }

    /// Looks up `p` per size; sizes missing from the table are answered at
    /// chance.
    pub fn from_table(table: BTreeMap<usize, f64>) -> Result<Self> {
        for &p in table.values() {
            check_probability(p)?;
        }
        Ok(Self::new(move |s| table.get(&s).copied().unwrap_or(0.5)))
    }

    pub fn p_correct(&self, size: usize) -> f64 {
        (self.psychometric)(size).clamp(0.0, 1.0)
    }

    pub fn respond<R: Rng + ?Sized>(&self, trial: &TrialSpec, participant_id: &str, rng: &mut R) -> Response {
        let correct = rng.random_bool(self.p_correct(trial.size));
        let chose_left = if correct { trial.left_is_real } else { !trial.left_is_real };
        Response::new(trial, participant_id, chose_left, None)
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(TuringError::InvalidArgument(format!("probability {p}")))
    }
}

/// `p(size) = 0.5 + 0.5 / (1 + exp(-(b0 + b1 ln size)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub b0: f64,
    pub b1: f64,
    pub log_likelihood: f64,
}

impl LogisticFit {
    pub fn predict(&self, size: f64) -> f64 {
        0.5 + 0.5 / (1.0 + (-(self.b0 + self.b1 * size.ln())).exp())
    }

    /// Size at which accuracy reaches 75%, if the slope is nonzero.
    pub fn threshold(&self) -> Option<f64> {
        (self.b1 != 0.0).then(|| (-self.b0 / self.b1).exp())
    }
}

fn logistic_log_likelihood(points: &[CurvePoint], b0: f64, b1: f64) -> f64 {
    points
        .iter()
        .map(|pt| {
            let eta = b0 + b1 * (pt.size as f64).ln();
            let s = 1.0 / (1.0 + (-eta).exp());
            let p = (0.5 + 0.5 * s).min(1.0 - 1e-15);
            let k = pt.n_correct as f64;
            let miss = (pt.n_trials - pt.n_correct) as f64;
            k * p.ln() + if miss > 0.0 { miss * (1.0 - p).ln() } else { 0.0 }
        })
        .sum()
}

/// Maximum-likelihood fit by Fisher scoring. `None` with fewer than two
/// sizes or when the likelihood has no finite maximum (e.g. perfect
/// accuracy everywhere).
pub fn fit_logistic(curve: &DetectionCurve) -> Option<LogisticFit> {
    let pts = &curve.points;
    if pts.len() < 2 {
        return None;
    }
    let (mut b0, mut b1) = (0.0, 0.0);
    let mut ll = logistic_log_likelihood(pts, b0, b1);
    for _ in 0..200 {
        let (mut g0, mut g1, mut i00, mut i01, mut i11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for pt in pts {
            let x = (pt.size as f64).ln();
            let s = 1.0 / (1.0 + (-(b0 + b1 * x)).exp());
            let p = (0.5 + 0.5 * s).clamp(1e-12, 1.0 - 1e-12);
            let dp = 0.5 * s * (1.0 - s);
            let n = pt.n_trials as f64;
            let k = pt.n_correct as f64;
            let score = (k - n * p) / (p * (1.0 - p)) * dp;
            let info = n * dp * dp / (p * (1.0 - p));
            g0 += score;
            g1 += score * x;
            i00 += info;
            i01 += info * x;
            i11 += info * x * x;
        }
        let det = i00 * i11 - i01 * i01;
        if !(det.is_finite() && det > 1e-300) {
            return None;
        }
        let d0 = (i11 * g0 - i01 * g1) / det;
        let d1 = (i00 * g1 - i01 * g0) / det;
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (c0, c1) = (b0 + step * d0, b1 + step * d1);
            let next = logistic_log_likelihood(pts, c0, c1);
            if next.is_finite() && next >= ll - 1e-12 {
                (b0, b1, improved) = (c0, c1, true);
                let done = (next - ll).abs() < 1e-12 && (d0.abs() + d1.abs()) * step < 1e-9;
                ll = next;
                if done {
                    return Some(LogisticFit { b0, b1, log_likelihood: ll });
                }
                break;
            }
            step *= 0.5;
        }
        if !improved || !(b0.is_finite() && b1.is_finite()) || b0.abs() + b1.abs() > 1e6 {
            return None;
        }
    }
    None
}
