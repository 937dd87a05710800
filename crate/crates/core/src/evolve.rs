//! Rank-aggregated evolution-strategies search through a latent space.
//!
//! Each round shows a lineup of `n` portraits decoded from `θ + σ·εᵢ`.
//! Participants rank the lineup by resemblance to a target (rank `n` is the
//! best match), the ranks are averaged into scores `Fᵢ`, and the seed moves by
//! `α / (n σ) · Σ Fᵢ εᵢ`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::facespace::{Decoder, FaceSpaceError, LatentPoint};
use crate::imagecore::{content_hash, Image};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search complete after {0} rounds")]
    SearchComplete(u32),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("invalid ballot: {0}")]
    InvalidBallot(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("update undefined for sigma = 0")]
    UndefinedUpdate,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Decoder(#[from] FaceSpaceError),
    #[error("search aborted in round {}: {reason}", partial.round)]
    Aborted {
        partial: Box<SearchState>,
        reason: String,
    },
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

/// Which scores enter the update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Average ranks minus their mean `(n + 1) / 2`.
    #[default]
    Centered,
    /// Average ranks as-is.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Portraits per lineup.
    pub n: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub rounds: u32,
    /// Ballots that close a round.
    pub quorum: usize,
    /// Latent dimension.
    pub d: usize,
    pub score_mode: ScoreMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::new(crate::facespace::DEFAULT_LATENT_DIM)
    }
}

impl SearchConfig {
    pub const DEFAULT_N: usize = 8;
    pub const DEFAULT_SIGMA: f64 = 0.3;
    pub const DEFAULT_ALPHA: f64 = 0.08;
    pub const DEFAULT_ROUNDS: u32 = 10;
    pub const DEFAULT_QUORUM: usize = 10;

    pub fn new(d: usize) -> Self {
        Self {
            n: Self::DEFAULT_N,
            sigma: Self::DEFAULT_SIGMA,
            alpha: Self::DEFAULT_ALPHA,
            rounds: Self::DEFAULT_ROUNDS,
            quorum: Self::DEFAULT_QUORUM,
            d,
            score_mode: ScoreMode::Centered,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(SearchError::InvalidConfig(m));
        if self.n < 2 {
            return fail(format!("lineup size {} < 2", self.n));
        }
        if self.quorum < 1 {
            return fail("quorum must be >= 1".into());
        }
        if self.rounds < 1 {
            return fail("rounds must be >= 1".into());
        }
        if self.d < 1 {
            return fail("latent dimension must be >= 1".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return fail(format!("sigma {} must be positive", self.sigma));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return fail(format!("alpha {} must be positive", self.alpha));
        }
        Ok(())
    }
}

/// One round's perturbations of the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lineup {
    pub round: u32,
    /// The seed the noise was added to.
    pub center: LatentPoint,
    pub sigma: f64,
    /// `n` standard normal vectors of dimension `d`.
    pub noise: Vec<Vec<f64>>,
    pub portrait_ids: Vec<String>,
}

impl Lineup {
    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }

    /// Latent point of portrait `i`: `center + σ·εᵢ`.
    pub fn candidate(&self, i: usize) -> LatentPoint {
        self.center.offset(&self.noise[i], self.sigma)
    }

    pub fn candidates(&self) -> Vec<LatentPoint> {
        (0..self.len()).map(|i| self.candidate(i)).collect()
    }
}

/// One participant's ranking of a lineup. `ranking[i]` is the rank of
/// portrait `i`, and rank `n` marks the strongest resemblance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub participant_id: String,
    pub round: u32,
    pub ranking: Vec<u32>,
}

impl Ballot {
    /// Builds a ballot from portrait indices ordered best match first.
    pub fn from_order(participant_id: impl Into<String>, round: u32, best_first: &[usize]) -> Self {
        let n = best_first.len();
        let mut ranking = vec![0; n];
        for (pos, &i) in best_first.iter().enumerate() {
            ranking[i] = (n - pos) as u32;
        }
        Self {
            participant_id: participant_id.into(),
            round,
            ranking,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.ranking.len() != n {
            return Err(SearchError::InvalidBallot(format!(
                "{} ranks for a lineup of {n}",
                self.ranking.len()
            )));
        }
        let mut seen = vec![false; n];
        for &r in &self.ranking {
            let slot = (r as usize)
                .checked_sub(1)
                .filter(|&i| i < n)
                .ok_or_else(|| SearchError::InvalidBallot(format!("rank {r} outside 1..={n}")))?;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(SearchError::InvalidBallot(format!("rank {r} repeated")));
            }
        }
        Ok(())
    }
}

/// Average ranks and their mean-centered version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub raw: Vec<f64>,
    pub centered: Vec<f64>,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    fn select(&self, mode: ScoreMode) -> &[f64] {
        match mode {
            ScoreMode::Centered => &self.centered,
            ScoreMode::Raw => &self.raw,
        }
    }
}

/// Averages integer rank vectors without permutation checks.
///
/// Centering is done on the integer rank sums before the single division,
/// so adding a constant to every rank leaves `centered` bit-identical.
pub fn aggregate_rank_vectors(ranks: &[Vec<i64>], n: usize) -> Result<ScoreVector> {
    if ranks.is_empty() {
        return Err(SearchError::InvalidBallot("no ballots to aggregate".into()));
    }
    if let Some(bad) = ranks.iter().find(|r| r.len() != n) {
        return Err(SearchError::InvalidBallot(format!(
            "{} ranks for a lineup of {n}",
            bad.len()
        )));
    }
    let k = ranks.len() as i128;
    let sums: Vec<i128> = (0..n)
        .map(|i| ranks.iter().map(|r| i128::from(r[i])).sum())
        .collect();
    let total: i128 = sums.iter().sum();
    let n_i = n as i128;
    let raw = sums.iter().map(|&s| s as f64 / k as f64).collect();
    let centered = sums
        .iter()
        .map(|&s| (n_i * s - total) as f64 / (k * n_i) as f64)
        .collect();
    Ok(ScoreVector { raw, centered })
}

/// Average rank per portrait over ballots from the same round.
pub fn aggregate_ranks(ballots: &[Ballot], n: usize) -> Result<ScoreVector> {
    let first = ballots
        .first()
        .ok_or_else(|| SearchError::InvalidBallot("no ballots to aggregate".into()))?;
    if let Some(b) = ballots.iter().find(|b| b.round != first.round) {
        return Err(SearchError::Protocol(format!(
            "ballots from rounds {} and {} mixed",
            first.round, b.round
        )));
    }
    for b in ballots {
        b.validate(n)?;
    }
    let ranks: Vec<Vec<i64>> = ballots
        .iter()
        .map(|b| b.ranking.iter().map(|&r| i64::from(r)).collect())
        .collect();
    aggregate_rank_vectors(&ranks, n)
}

/// Trajectory record of one completed round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    /// Seed after this round's update.
    pub theta: LatentPoint,
    pub noise: Vec<Vec<f64>>,
    pub raw_scores: Vec<f64>,
    pub centered_scores: Vec<f64>,
    pub portrait_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub theta: LatentPoint,
    pub round: u32,
    pub config: SearchConfig,
    pub history: Vec<RoundRecord>,
    /// Lineup proposed for the current round and not yet scored.
    pub pending: Option<Lineup>,
}

impl SearchState {
    /// Fresh search seeded at the origin.
    pub fn new(config: SearchConfig) -> Self {
        Self::with_seed(LatentPoint::origin(config.d), config)
    }

    pub fn with_seed(theta: LatentPoint, config: SearchConfig) -> Self {
        Self {
            theta,
            round: 0,
            config,
            history: Vec::new(),
            pending: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.round >= self.config.rounds
    }

    /// Writes one JSON object per completed round.
    pub fn write_trajectory<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.history {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Draws the round's noise, names each portrait by the content hash of its
/// decoded image, and stores the lineup as pending.
pub fn propose_lineup<R: Rng + ?Sized>(
    state: &mut SearchState,
    decoder: &dyn Decoder,
    rng: &mut R,
) -> Result<Lineup> {
    if state.is_complete() {
        return Err(SearchError::SearchComplete(state.round));
    }
    let cfg = &state.config;
    if decoder.latent_dim() != cfg.d || state.theta.dim() != cfg.d {
        return Err(SearchError::Shape(format!(
            "decoder dimension {}, seed dimension {}, config dimension {}",
            decoder.latent_dim(),
            state.theta.dim(),
            cfg.d
        )));
    }
    let noise: Vec<Vec<f64>> = (0..cfg.n)
        .map(|_| (0..cfg.d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let mut lineup = Lineup {
        round: state.round,
        center: state.theta.clone(),
        sigma: cfg.sigma,
        noise,
        portrait_ids: Vec::new(),
    };
    lineup.portrait_ids = lineup
        .candidates()
        .iter()
        .map(|z| decoder.decode(z).map(|img| content_hash(&img)))
        .collect::<Result<_, _>>()?;
    state.pending = Some(lineup.clone());
    Ok(lineup)
}

/// `θ ← θ + α / (n σ) · Σ Fᵢ εᵢ`, then advance the round.
pub fn nes_update(mut state: SearchState, lineup: &Lineup, scores: &ScoreVector) -> Result<SearchState> {
    if lineup.round != state.round {
        return Err(SearchError::Protocol(format!(
            "lineup for round {} applied in round {}",
            lineup.round, state.round
        )));
    }
    let n = lineup.len();
    if scores.len() != n || scores.centered.len() != n {
        return Err(SearchError::Shape(format!(
            "{} scores for {n} portraits",
            scores.len()
        )));
    }
    if lineup.noise.iter().any(|e| e.len() != state.theta.dim()) {
        return Err(SearchError::Shape("noise dimension differs from seed".into()));
    }
    if lineup.sigma == 0.0 {
        return Err(SearchError::UndefinedUpdate);
    }

    let f = scores.select(state.config.score_mode);
    let mut acc = vec![0.0; state.theta.dim()];
    for (fi, eps) in f.iter().zip(&lineup.noise) {
        for (a, e) in acc.iter_mut().zip(eps) {
            *a += fi * e;
        }
    }
    let coef = state.config.alpha / (n as f64 * lineup.sigma);
    let theta = LatentPoint(
        state
            .theta
            .coords()
            .iter()
            .zip(&acc)
            .map(|(t, a)| t + coef * a)
            .collect(),
    );

    state.history.push(RoundRecord {
        round: state.round,
        theta: theta.clone(),
        noise: lineup.noise.clone(),
        raw_scores: scores.raw.clone(),
        centered_scores: scores.centered.clone(),
        portrait_ids: lineup.portrait_ids.clone(),
    });
    state.theta = theta;
    state.round += 1;
    state.pending = None;
    Ok(state)
}

fn rank_by_distance<R: Rng + ?Sized>(
    distances: &[f64],
    noise_level: f64,
    rng: &mut R,
) -> Vec<u32> {
    let n = distances.len();
    let perturbed: Vec<f64> = if noise_level > 0.0 {
        let lo = distances.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = distances.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sd = noise_level * (hi - lo);
        distances
            .iter()
            .map(|d| {
                let e: f64 = StandardNormal.sample(rng);
                d + sd * e
            })
            .collect()
    } else {
        distances.to_vec()
    };
    // Farthest first: position p in this order receives rank p + 1.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| perturbed[b].total_cmp(&perturbed[a]).then(b.cmp(&a)));
    let mut ranking = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        ranking[i] = pos as u32 + 1;
    }
    ranking
}

fn l2(a: &Image, b: &Image) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Simulated participant: ranks portraits by image-space distance to
/// `target`, after adding Gaussian noise with standard deviation
/// `noise_level × (max distance − min distance)`. Closest gets rank `n`.
pub fn oracle_ballot<R: Rng + ?Sized>(
    lineup: &Lineup,
    decoder: &dyn Decoder,
    target: &Image,
    noise_level: f64,
    rng: &mut R,
    participant_id: &str,
) -> Result<Ballot> {
    let images = lineup
        .candidates()
        .iter()
        .map(|z| decoder.decode(z))
        .collect::<Result<Vec<_>, _>>()?;
    oracle_ballot_for_images(lineup.round, &images, target, noise_level, rng, participant_id)
}

fn oracle_ballot_for_images<R: Rng + ?Sized>(
    round: u32,
    images: &[Image],
    target: &Image,
    noise_level: f64,
    rng: &mut R,
    participant_id: &str,
) -> Result<Ballot> {
    if !(noise_level.is_finite() && noise_level >= 0.0) {
        return Err(SearchError::InvalidConfig(format!("noise level {noise_level}")));
    }
    if let Some(img) = images.iter().find(|img| !img.same_shape(target)) {
        return Err(SearchError::Shape(format!(
            "portrait {}x{} vs target {}x{}",
            img.width(),
            img.height(),
            target.width(),
            target.height()
        )));
    }
    let distances: Vec<f64> = images.iter().map(|img| l2(img, target)).collect();
    Ok(Ballot {
        participant_id: participant_id.to_string(),
        round,
        ranking: rank_by_distance(&distances, noise_level, rng),
    })
}

/// Supplies the ballots that close each round.
pub trait BallotSource {
    /// Ballots for `lineup`, or `Ok(None)` to stop the search early.
    fn collect(&mut self, lineup: &Lineup, quorum: usize) -> Result<Option<Vec<Ballot>>, String>;
}

/// A panel of simulated participants sharing one target image.
pub struct OraclePanel<'a, R> {
    decoder: &'a dyn Decoder,
    target: Image,
    noise_level: f64,
    rng: R,
}

impl<'a, R: Rng> OraclePanel<'a, R> {
    pub fn new(decoder: &'a dyn Decoder, target: Image, noise_level: f64, rng: R) -> Self {
        Self {
            decoder,
            target,
            noise_level,
            rng,
        }
    }
}

impl<R: Rng> BallotSource for OraclePanel<'_, R> {
    fn collect(&mut self, lineup: &Lineup, quorum: usize) -> Result<Option<Vec<Ballot>>, String> {
        let images = lineup
            .candidates()
            .iter()
            .map(|z| self.decoder.decode(z))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        (0..quorum)
            .map(|p| {
                oracle_ballot_for_images(
                    lineup.round,
                    &images,
                    &self.target,
                    self.noise_level,
                    &mut self.rng,
                    &format!("oracle-{p}"),
                )
                .map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

/// Runs propose → collect → aggregate → update from the origin for
/// `config.rounds` rounds, or until the source stops.
pub fn run_search<R: Rng + ?Sized>(
    config: SearchConfig,
    decoder: &dyn Decoder,
    source: &mut dyn BallotSource,
    rng: &mut R,
) -> Result<SearchState> {
    let mut state = SearchState::new(config);
    if state.config.rounds == 0 {
        return Ok(state);
    }
    state.config.validate()?;
    while !state.is_complete() {
        let lineup = propose_lineup(&mut state, decoder, rng)?;
        let abort = |state: SearchState, reason: String| SearchError::Aborted {
            partial: Box::new(state),
            reason,
        };
        let ballots = match source.collect(&lineup, state.config.quorum) {
            Ok(Some(b)) => b,
            Ok(None) => break,
            Err(reason) => return Err(abort(state, reason)),
        };
        if ballots.iter().any(|b| b.round != lineup.round) {
            return Err(abort(state, "ballot source returned stale ballots".into()));
        }
        let scores = match aggregate_ranks(&ballots, lineup.len()) {
            Ok(s) => s,
            Err(e) => return Err(abort(state, e.to_string())),
        };
        state = nes_update(state, &lineup, &scores)?;
    }
    Ok(state)
}
