//! Synthetic event tapes and mode-space series with planted structure.
//!
//! Each significant price change is driven by a latent 8-vector `z` drawn
//! from the planted covariance (optionally with planted VAR dynamics). The
//! latent vector sets the duration, the six flow volumes and the sign of the
//! move; the change is then expanded into an event sequence whose sizes add
//! up to exactly those volumes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Vec8, C_A, C_B, DIM, DT, EX_A, EX_B, LO_A, LO_B, RET};
use crate::ingest::{EventKind, EventTape, LobEvent, SessionClock, Side};
use crate::linalg::Matrix;
use crate::var_model::companion_spectral_radius;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("planted covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("planted VAR is not stable (companion spectral radius {radius})")]
    UnstableModel { radius: f64 },
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

/// `A exp(-t/τ) + B`, t and τ in minutes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub a: f64,
    pub tau: f64,
    pub b: f64,
}

impl Regime {
    pub fn value(&self, t: f64) -> f64 {
        self.a * (-t / self.tau).exp() + self.b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedVar {
    /// Φ_1 … Φ_p, each 8×8 row-major.
    pub lags: Vec<Vec<Vec<f64>>>,
    /// Innovation covariance; the planted covariance when absent.
    #[serde(default)]
    pub innovation_cov: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub days: usize,
    pub events_per_day: usize,
    /// Profile before and after the split.
    pub intraday: [Regime; 2],
    /// Session minute at which the second regime starts.
    pub split_minute: usize,
    /// 8×8 covariance of the latent vector; identity when absent.
    pub planted_cov: Option<Vec<Vec<f64>>>,
    pub planted_var: Option<PlantedVar>,
    pub tick_size: f64,
    pub seed: u64,
    /// Mean volume per change of lo_b, lo_a, c_b, c_a, ex_b, ex_a.
    pub base_volumes: [f64; 6],
    /// Log-scale dispersion of the volumes.
    pub sigma_v: f64,
    /// Log-scale dispersion of the durations.
    pub sigma_t: f64,
    /// Largest single order; flows are split into orders of at most this size.
    pub order_size: u64,
    /// Mean number of bounces (spread open then refill) per price change.
    pub bounce_rate: f64,
    /// Opening best bid of every day, in ticks.
    pub base_price: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 60,
            events_per_day: 20_000,
            intraday: [
                Regime { a: 2.2, tau: 50.0, b: 1.79 },
                Regime { a: 1.95, tau: 6.85, b: 3.95 },
            ],
            split_minute: 390,
            planted_cov: Some(default_covariance()),
            planted_var: None,
            tick_size: 1.0,
            seed: 7,
            base_volumes: [40.0, 40.0, 30.0, 30.0, 15.0, 15.0],
            sigma_v: 0.6,
            sigma_t: 0.8,
            order_size: 10,
            bounce_rate: 0.3,
            base_price: 10_000,
        }
    }
}

/// Bid-ask symmetric latent covariance in which up-moves come with ask
/// executions, bid placements and ask cancellations, and busy changes are
/// short.
pub fn default_covariance() -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; DIM]; DIM];
    for (i, row) in c.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (i, j, v) in [
        (RET, EX_A, 0.4),
        (RET, EX_B, -0.4),
        (RET, LO_B, 0.2),
        (RET, LO_A, -0.2),
        (RET, C_A, 0.15),
        (RET, C_B, -0.15),
        (LO_B, LO_A, 0.3),
        (C_B, C_A, 0.3),
        (EX_B, EX_A, 0.2),
        (DT, LO_B, -0.2),
        (DT, LO_A, -0.2),
        (DT, C_B, -0.15),
        (DT, C_A, -0.15),
        (DT, EX_B, -0.1),
        (DT, EX_A, -0.1),
    ] {
        c[i][j] = v;
        c[j][i] = v;
    }
    c
}

impl SynthConfig {
    pub fn profile_at(&self, minute: f64) -> f64 {
        let s = self.split_minute as f64;
        if minute < s {
            self.intraday[0].value(minute)
        } else {
            self.intraday[1].value(minute - s)
        }
    }

    fn covariance(&self) -> Result<Matrix<f64>, SynthError> {
        match &self.planted_cov {
            Some(rows) => square8(rows),
            None => Ok(Matrix::identity(DIM)),
        }
    }

    fn var_lags(&self) -> Result<Option<Vec<Matrix<f64>>>, SynthError> {
        let Some(v) = &self.planted_var else { return Ok(None) };
        if v.lags.is_empty() {
            return Err(SynthError::InvalidConfig("planted VAR has no lags".into()));
        }
        let lags = v.lags.iter().map(|m| square8(m)).collect::<Result<Vec<_>, _>>()?;
        let radius = companion_spectral_radius(&lags);
        if !(radius < 1.0) {
            return Err(SynthError::UnstableModel { radius });
        }
        Ok(Some(lags))
    }

    fn innovation_factor(&self) -> Result<Matrix<f64>, SynthError> {
        let cov = match self.planted_var.as_ref().and_then(|v| v.innovation_cov.as_ref()) {
            Some(rows) => square8(rows)?,
            None => self.covariance()?,
        };
        if cov.asymmetry() > 1e-12 {
            return Err(SynthError::NotPositiveDefinite);
        }
        cov.cholesky().ok_or(SynthError::NotPositiveDefinite)
    }
}

fn square8(rows: &[Vec<f64>]) -> Result<Matrix<f64>, SynthError> {
    if rows.len() != DIM || rows.iter().any(|r| r.len() != DIM) {
        return Err(SynthError::InvalidConfig("planted matrices must be 8×8".into()));
    }
    Ok(Matrix::from_rows(rows))
}

fn normal8(rng: &mut ChaCha20Rng) -> Vec8<f64> {
    std::array::from_fn(|_| StandardNormal.sample(rng))
}

/// Draws of a VAR (or iid Gaussian when `lags` is empty) with innovations `L ε`.
struct LatentProcess {
    lags: Vec<Matrix<f64>>,
    chol: Matrix<f64>,
    history: Vec<Vec8<f64>>,
}

impl LatentProcess {
    fn new(lags: Vec<Matrix<f64>>, chol: Matrix<f64>) -> Self {
        let p = lags.len();
        Self {
            lags,
            chol,
            history: vec![[0.0; DIM]; p],
        }
    }

    fn next(&mut self, rng: &mut ChaCha20Rng) -> Vec8<f64> {
        let e = normal8(rng);
        let le = self.chol.matvec(&e);
        let mut y: Vec8<f64> = std::array::from_fn(|i| le[i]);
        for (k, phi) in self.lags.iter().enumerate() {
            let past = &self.history[k];
            for i in 0..DIM {
                for j in 0..DIM {
                    y[i] += phi[(i, j)] * past[j];
                }
            }
        }
        if !self.history.is_empty() {
            self.history.rotate_right(1);
            self.history[0] = y;
        }
        y
    }
}

const BURN_IN: usize = 2_000;

/// Simulates `Y_k = Σ Φ_j Y_{k-j} + L ε_k` from the planted VAR.
pub fn generate_mode_series(config: &SynthConfig, n: usize) -> Result<Vec<Vec8<f64>>, SynthError> {
    let lags = config
        .var_lags()?
        .ok_or_else(|| SynthError::InvalidConfig("mode series needs a planted VAR".into()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut proc = LatentProcess::new(lags, config.innovation_factor()?);
    for _ in 0..BURN_IN {
        proc.next(&mut rng);
    }
    Ok((0..n).map(|_| proc.next(&mut rng)).collect())
}

/// `n` iid draws from `N(0, cov)`, generated in fixed-size chunks on
/// independent streams so the output does not depend on the thread count.
pub fn generate_gaussian_vectors(cov: &Matrix<f64>, n: usize, seed: u64) -> Result<Vec<Vec8<f64>>, SynthError> {
    if cov.rows() != DIM || cov.cols() != DIM {
        return Err(SynthError::InvalidConfig("covariance must be 8×8".into()));
    }
    let chol = cov.cholesky().ok_or(SynthError::NotPositiveDefinite)?;
    const CHUNK: usize = 1 << 14;
    let chunks: Vec<Vec<Vec8<f64>>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| {
                    let e = normal8(&mut rng);
                    let v = chol.matvec(&e);
                    std::array::from_fn(|i| v[i])
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Scalar AR(1) `x_k = φ x_{k-1} + ε_k` started from its stationary law.
pub fn ar1_series(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut x: f64 = StandardNormal.sample(&mut rng);
    x /= (1.0 - phi * phi).max(1e-12).sqrt();
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x = phi * x + e;
            x
        })
        .collect()
}

/// Generates a multi-day tape. Deterministic in the config; days run in
/// parallel on their own RNG streams.
pub fn generate_tape(config: &SynthConfig) -> Result<EventTape, SynthError> {
    if config.order_size == 0 {
        return Err(SynthError::InvalidConfig("order_size must be positive".into()));
    }
    if !(config.bounce_rate >= 0.0) || config.base_volumes.iter().any(|v| !(*v > 0.0)) {
        return Err(SynthError::InvalidConfig("volumes must be positive and bounce_rate non-negative".into()));
    }
    let session = SessionClock::default();
    let minutes = session.minutes();
    if config.split_minute >= minutes {
        return Err(SynthError::InvalidConfig("profile split outside the session".into()));
    }
    let levels: Vec<f64> = (0..minutes).map(|m| config.profile_at(m as f64 + 0.5)).collect();
    if levels.iter().any(|v| !(*v > 0.0)) {
        return Err(SynthError::InvalidConfig("intraday profile must stay positive".into()));
    }
    let mean_level = levels.iter().sum::<f64>() / minutes as f64;
    let lags = config.var_lags()?.unwrap_or_default();
    let chol = config.innovation_factor()?;

    // expected events per change, for sizing the day
    let per_change: f64 = config
        .base_volumes
        .iter()
        .map(|v| (v / config.order_size as f64).ceil().max(1.0))
        .sum::<f64>()
        + 3.0
        + 3.0 * config.bounce_rate;
    let changes = if config.events_per_day == 0 {
        0
    } else {
        ((config.events_per_day as f64 / per_change).round() as usize).max(1)
    };

    let ctx = DayContext {
        config,
        session,
        levels: &levels,
        mean_level,
        changes,
    };
    let days: Vec<Vec<LobEvent>> = (0..config.days as u32)
        .into_par_iter()
        .map(|d| {
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
            rng.set_stream(d as u64);
            let mut proc = LatentProcess::new(lags.clone(), chol.clone());
            if !lags.is_empty() {
                for _ in 0..BURN_IN {
                    proc.next(&mut rng);
                }
            }
            ctx.day(d, &mut rng, &mut proc)
        })
        .collect();
    let mut tape = EventTape::new(days.into_iter().flatten().collect());
    tape.session = session;
    tape.tick_size = config.tick_size;
    Ok(tape)
}

struct DayContext<'a> {
    config: &'a SynthConfig,
    session: SessionClock,
    levels: &'a [f64],
    mean_level: f64,
    changes: usize,
}

/// Indices into the six-flow budget array.
const LO: [usize; 2] = [0, 1];
const CO: [usize; 2] = [2, 3];
const EX: [usize; 2] = [4, 5];

fn side_index(s: Side) -> usize {
    match s {
        Side::Bid => 0,
        Side::Ask => 1,
    }
}

/// Relative event with post-event quotes expressed as offsets from the
/// current stable quote.
#[derive(Clone, Copy)]
struct Ev {
    kind: EventKind,
    side: Side,
    size: u64,
    dbid: i64,
    dask: i64,
    promoted: bool,
}

impl DayContext<'_> {
    fn day(&self, day: u32, rng: &mut ChaCha20Rng, proc: &mut LatentProcess) -> Vec<LobEvent> {
        let cfg = self.config;
        let n = self.changes;
        if n == 0 {
            return Vec::new();
        }
        let latent: Vec<Vec8<f64>> = (0..n).map(|_| proc.next(rng)).collect();
        let st = cfg.sigma_t;
        let raw_dt: Vec<f64> = latent.iter().map(|z| (st * z[0] - st * st / 2.0).exp()).collect();
        let total: f64 = raw_dt.iter().sum();
        let span_ns = self.session.length_ns() as f64 * 0.995;
        let mut times = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut last = 0i64;
        for dt in &raw_dt {
            acc += dt;
            let t = ((acc / total * span_ns).round() as i64).max(last + 1);
            times.push(t);
            last = t;
        }

        let mut events = Vec::new();
        let (mut bid, mut ask) = (cfg.base_price, cfg.base_price + 1);
        let mut prev_t = 0i64;
        let sv = cfg.sigma_v;
        for (i, z) in latent.iter().enumerate() {
            let minute = self.session.minute_of(times[i]);
            let scale = self.levels[minute] / self.mean_level;
            let mut budget: [u64; 6] = std::array::from_fn(|k| {
                let v = scale * cfg.base_volumes[k] * (sv * z[k + 1] - sv * sv / 2.0).exp();
                v.round().max(0.0) as u64
            });
            let up = z[7] > 0.0;
            let rel = self.expand(&mut budget, up, i == 0, rng);
            let m = rel.len() as i64;
            for (j, e) in rel.iter().enumerate() {
                let ts = if j + 1 == rel.len() {
                    times[i]
                } else {
                    prev_t + (times[i] - prev_t) * (j as i64 + 1) / (m + 1)
                };
                events.push(LobEvent {
                    ts_ns: ts,
                    day,
                    kind: e.kind,
                    side: e.side,
                    size: e.size,
                    best_bid: bid + e.dbid,
                    best_ask: ask + e.dask,
                    promoted: e.promoted,
                });
            }
            if up {
                bid += 1;
                ask += 1;
            } else {
                bid -= 1;
                ask -= 1;
            }
            prev_t = times[i];
        }
        events
    }

    /// Event sequence of one change; `budget` is consumed exactly.
    fn expand(&self, budget: &mut [u64; 6], up: bool, first: bool, rng: &mut ChaCha20Rng) -> Vec<Ev> {
        let q = self.config.order_size;
        // the side whose best queue is depleted, and the side that then
        // places inside the open spread
        let (dep, place) = if up { (Side::Ask, Side::Bid) } else { (Side::Bid, Side::Ask) };
        let (di, pi) = (side_index(dep), side_index(place));
        if budget[EX[di]] + budget[CO[di]] == 0 {
            budget[EX[di]] = 1;
        }
        if budget[LO[pi]] == 0 {
            budget[LO[pi]] = 1;
        }
        let mut remaining = *budget;
        let dep_ev = take_depletion(&mut remaining, dep, q);
        let place_size = remaining[LO[pi]].min(q);
        remaining[LO[pi]] -= place_size;

        let mut blocks: Vec<Vec<Ev>> = Vec::new();
        let bounces = match Poisson::new(self.config.bounce_rate) {
            Ok(p) if self.config.bounce_rate > 0.0 => p.sample(rng) as usize,
            _ => 0,
        };
        for _ in 0..bounces {
            let first_side = if rng.random::<bool>() { Side::Bid } else { Side::Ask };
            for side in [first_side, first_side.opposite()] {
                let s = side_index(side);
                if remaining[LO[s]] == 0 || remaining[EX[s]] + remaining[CO[s]] == 0 {
                    continue;
                }
                let mut b = vec![take_depletion(&mut remaining, side, q)];
                let refill = remaining[LO[s]].min(q);
                remaining[LO[s]] -= refill;
                b.push(promoted(side, q));
                b.push(Ev {
                    kind: EventKind::LimitOrder,
                    side,
                    size: refill,
                    dbid: 0,
                    dask: 0,
                    promoted: false,
                });
                blocks.push(b);
                break;
            }
        }
        for (k, kind, side) in [
            (0, EventKind::LimitOrder, Side::Bid),
            (1, EventKind::LimitOrder, Side::Ask),
            (2, EventKind::Cancellation, Side::Bid),
            (3, EventKind::Cancellation, Side::Ask),
            (4, EventKind::MarketOrder, Side::Bid),
            (5, EventKind::MarketOrder, Side::Ask),
        ] {
            while remaining[k] > 0 {
                let s = remaining[k].min(q);
                remaining[k] -= s;
                blocks.push(vec![Ev {
                    kind,
                    side,
                    size: s,
                    dbid: 0,
                    dask: 0,
                    promoted: false,
                }]);
            }
        }
        blocks.shuffle(rng);
        if first && blocks.is_empty() {
            // the day needs a stable quote before its first move
            budget[LO[pi]] += 1;
            blocks.push(vec![Ev {
                kind: EventKind::LimitOrder,
                side: place,
                size: 1,
                dbid: 0,
                dask: 0,
                promoted: false,
            }]);
        }
        let mut out: Vec<Ev> = blocks.into_iter().flatten().collect();
        out.push(dep_ev);
        out.push(promoted(dep, q));
        // new order at the old opposite price closes the spread one tick over
        let (dbid, dask) = if up { (1, 1) } else { (-1, -1) };
        out.push(Ev {
            kind: EventKind::LimitOrder,
            side: place,
            size: place_size,
            dbid,
            dask,
            promoted: false,
        });
        out
    }
}

/// Market order (or cancellation when no execution volume is left) that
/// empties the best queue of `side`, opening the spread by one tick.
fn take_depletion(remaining: &mut [u64; 6], side: Side, q: u64) -> Ev {
    let s = side_index(side);
    let (slot, kind) = if remaining[EX[s]] > 0 {
        (EX[s], EventKind::MarketOrder)
    } else {
        (CO[s], EventKind::Cancellation)
    };
    let size = remaining[slot].min(q);
    remaining[slot] -= size;
    let (dbid, dask) = match side {
        Side::Bid => (-1, 0),
        Side::Ask => (0, 1),
    };
    Ev {
        kind,
        side,
        size,
        dbid,
        dask,
        promoted: false,
    }
}

/// The second-best queue of `side` moving up to the best after a depletion.
fn promoted(side: Side, q: u64) -> Ev {
    let (dbid, dask) = match side {
        Side::Bid => (-1, 0),
        Side::Ask => (0, 1),
    };
    Ev {
        kind: EventKind::LimitOrder,
        side,
        size: q,
        dbid,
        dask,
        promoted: true,
    }
}
