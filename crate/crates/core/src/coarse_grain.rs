//! Significant price changes, flow aggregation between them, and the second
//! (binned) coarse-graining scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Vec8, DT, EX_A, EX_B, LO_A, LO_B, C_A, C_B, RET};
use crate::ingest::{EventKind, EventTape, LobEvent, Side};
use crate::scalar::Scalar;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum CoarseError {
    #[error("tape has events but never shows a one-tick quote")]
    NoQuotes,
    #[error("insufficient data: need at least {needed} records in some day, longest day has {got}")]
    InsufficientData { needed: usize, got: usize },
}

/// One significant price change (span 1) or a bin of `span` consecutive ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceChangeRecord<T> {
    pub day: u32,
    /// Position within the day.
    pub index: u32,
    /// Time of the (last) change, nanoseconds since session open.
    pub t_ns: i64,
    /// Duration in seconds.
    pub dt: T,
    pub v_lo_b: T,
    pub v_lo_a: T,
    pub v_c_b: T,
    pub v_c_a: T,
    pub v_ex_b: T,
    pub v_ex_a: T,
    /// Mid-price change in ticks.
    pub ret: T,
    pub span: u32,
}

pub type BinnedRecord<T> = PriceChangeRecord<T>;

impl<T: Scalar> PriceChangeRecord<T> {
    pub fn to_vector(&self) -> Vec8<T> {
        [
            self.dt,
            self.v_lo_b,
            self.v_lo_a,
            self.v_c_b,
            self.v_c_a,
            self.v_ex_b,
            self.v_ex_a,
            self.ret,
        ]
    }

    pub fn with_vector(&self, v: &Vec8<T>) -> Self {
        Self {
            dt: v[DT],
            v_lo_b: v[LO_B],
            v_lo_a: v[LO_A],
            v_c_b: v[C_B],
            v_c_a: v[C_A],
            v_ex_b: v[EX_B],
            v_ex_a: v[EX_A],
            ret: v[RET],
            ..self.clone()
        }
    }

    /// Execution imbalance `v_ex_a - v_ex_b`.
    pub fn imbalance(&self) -> T {
        self.v_ex_a - self.v_ex_b
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DetectionOptions {
    /// Minimum spread in ticks; quotes at this spread are "stable".
    pub min_spread: i64,
    /// Wide-spread runs longer than this many events are reported.
    pub max_transient_events: usize,
}

impl Default for DetectionOptions {
    fn default() -> Self {
        Self {
            min_spread: 1,
            max_transient_events: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WideSpreadEpisode {
    pub day: u32,
    pub start_ns: i64,
    pub end_ns: i64,
    pub events: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub days: usize,
    pub days_without_quotes: Vec<u32>,
    /// Days whose first duration was measured from session open.
    pub first_dt_from_open: usize,
    /// Records whose timestamp was nudged forward to keep durations positive.
    pub clamped_durations: usize,
    /// Events after the last change of a day, discarded.
    pub trailing_events_dropped: usize,
    pub wide_spread_episodes: Vec<WideSpreadEpisode>,
}

#[derive(Default)]
struct Flows([u64; 6]);

impl Flows {
    fn add(&mut self, e: &LobEvent) {
        let slot = match (e.kind, e.side) {
            (EventKind::LimitOrder, _) if e.promoted => return,
            (EventKind::LimitOrder, Side::Bid) => 0,
            (EventKind::LimitOrder, Side::Ask) => 1,
            (EventKind::Cancellation, Side::Bid) => 2,
            (EventKind::Cancellation, Side::Ask) => 3,
            (EventKind::MarketOrder, Side::Bid) => 4,
            (EventKind::MarketOrder, Side::Ask) => 5,
        };
        self.0[slot] += e.size;
    }
}

struct DayOutcome<T> {
    records: Vec<PriceChangeRecord<T>>,
    had_quotes: bool,
    clamped: usize,
    trailing: usize,
    episodes: Vec<WideSpreadEpisode>,
}

fn detect_day<T: Scalar>(day: u32, events: &[LobEvent], opts: &DetectionOptions) -> DayOutcome<T> {
    let mut out = DayOutcome {
        records: Vec::new(),
        had_quotes: false,
        clamped: 0,
        trailing: 0,
        episodes: Vec::new(),
    };
    let mut flows = Flows::default();
    let mut stable: Option<(i64, i64)> = None;
    let mut last_t: i64 = 0;
    let mut since_last = 0usize;
    let mut wide: Option<(i64, i64, usize)> = None;
    let ns_per_s = T::lit(1e9);

    for e in events {
        flows.add(e);
        since_last += 1;
        let (b, a) = (e.best_bid, e.best_ask);
        if a - b > opts.min_spread {
            wide = Some(match wide {
                Some((s, _, n)) => (s, e.ts_ns, n + 1),
                None => (e.ts_ns, e.ts_ns, 1),
            });
            continue;
        }
        if let Some((s, end, n)) = wide.take() {
            if n > opts.max_transient_events {
                out.episodes.push(WideSpreadEpisode {
                    day,
                    start_ns: s,
                    end_ns: end,
                    events: n,
                });
            }
        }
        match stable {
            None => {
                stable = Some((b, a));
                out.had_quotes = true;
            }
            Some((b0, a0)) if (b, a) != (b0, a0) => {
                // new bid at or above the old ask, or new ask at or below the old bid
                if b >= a0 || a <= b0 {
                    let mut t = e.ts_ns;
                    if t <= last_t {
                        t = last_t + 1;
                        out.clamped += 1;
                    }
                    let f = flows.0.map(|v| T::from_u64(v).unwrap_or_else(T::nan));
                    out.records.push(PriceChangeRecord {
                        day,
                        index: out.records.len() as u32,
                        t_ns: t,
                        dt: T::from_i64(t - last_t).unwrap_or_else(T::nan) / ns_per_s,
                        v_lo_b: f[0],
                        v_lo_a: f[1],
                        v_c_b: f[2],
                        v_c_a: f[3],
                        v_ex_b: f[4],
                        v_ex_a: f[5],
                        ret: T::from_i64((b + a) - (b0 + a0)).unwrap_or_else(T::nan) / T::lit(2.0),
                        span: 1,
                    });
                    flows = Flows::default();
                    last_t = t;
                    since_last = 0;
                }
                stable = Some((b, a));
            }
            Some(_) => {}
        }
    }
    if let Some((s, end, n)) = wide {
        if n > opts.max_transient_events {
            out.episodes.push(WideSpreadEpisode {
                day,
                start_ns: s,
                end_ns: end,
                events: n,
            });
        }
    }
    out.trailing = since_last;
    out
}

/// Detects significant price changes and aggregates the flows between them.
pub fn detect_significant_changes<T: Scalar>(tape: &EventTape) -> Result<Vec<PriceChangeRecord<T>>, CoarseError> {
    detect_with_report(tape, &DetectionOptions::default()).map(|(r, _)| r)
}

pub fn detect_with_report<T: Scalar>(
    tape: &EventTape,
    opts: &DetectionOptions,
) -> Result<(Vec<PriceChangeRecord<T>>, DetectionReport), CoarseError> {
    let days = tape.days();
    let outcomes: Vec<(u32, DayOutcome<T>)> = days
        .par_iter()
        .map(|(day, evs)| (*day, detect_day(*day, evs, opts)))
        .collect();

    let mut report = DetectionReport {
        days: days.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    let mut any_quotes = false;
    for (day, o) in outcomes {
        any_quotes |= o.had_quotes;
        if !o.had_quotes {
            report.days_without_quotes.push(day);
        }
        if !o.records.is_empty() {
            report.first_dt_from_open += 1;
        }
        report.clamped_durations += o.clamped;
        report.trailing_events_dropped += o.trailing;
        report.wide_spread_episodes.extend(o.episodes);
        records.extend(o.records);
    }
    if !tape.events.is_empty() && !any_quotes {
        return Err(CoarseError::NoQuotes);
    }
    Ok((records, report))
}

/// Index ranges of consecutive records sharing a day.
pub fn day_runs<T>(records: &[PriceChangeRecord<T>]) -> Vec<std::ops::Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].day != records[start].day {
            if start < i {
                runs.push(start..i);
            }
            start = i;
        }
    }
    runs
}

/// Sums disjoint groups of `n` consecutive records within each day; the
/// trailing remainder of a day is dropped.
pub fn bin_records<T: Scalar>(records: &[PriceChangeRecord<T>], n: usize) -> Vec<BinnedRecord<T>> {
    assert!(n >= 1, "bin size must be at least 1");
    let mut out = Vec::new();
    for run in day_runs(records) {
        for (k, chunk) in records[run].chunks_exact(n).enumerate() {
            let mut sum = [T::zero(); 8];
            for r in chunk {
                for (s, v) in sum.iter_mut().zip(r.to_vector()) {
                    *s += v;
                }
            }
            let last = &chunk[chunk.len() - 1];
            let mut rec = last.with_vector(&sum);
            rec.index = k as u32;
            rec.span = chunk.iter().map(|r| r.span).sum();
            out.push(rec);
        }
    }
    out
}

/// Normalised return autocorrelation, lags `0..=max_lag`, computed per day and
/// averaged over the days long enough to support `max_lag`.
pub fn return_autocorrelation<T: Scalar>(records: &[PriceChangeRecord<T>], max_lag: usize) -> Result<Vec<T>, CoarseError> {
    let series: Vec<Vec<T>> = day_runs(records)
        .into_iter()
        .map(|r| records[r].iter().map(|x| x.ret).collect())
        .collect();
    pooled_autocorrelation(&series, max_lag)
}

pub fn pooled_autocorrelation<T: Scalar>(series: &[Vec<T>], max_lag: usize) -> Result<Vec<T>, CoarseError> {
    let mut acc = vec![T::zero(); max_lag + 1];
    let mut used = 0usize;
    for s in series {
        if let Some(acf) = stats::autocorrelation(s, max_lag) {
            for (a, c) in acc.iter_mut().zip(acf) {
                *a += c;
            }
            used += 1;
        }
    }
    if used == 0 {
        return Err(CoarseError::InsufficientData {
            needed: max_lag + 2,
            got: series.iter().map(Vec::len).max().unwrap_or(0),
        });
    }
    let k = T::from_usize_lossy(used);
    Ok(acc.into_iter().map(|a| a / k).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinChoice {
    pub n: usize,
    /// False when the threshold is never met within the available lags.
    pub converged: bool,
}

/// Smallest lag beyond which every autocorrelation stays below `threshold` in
/// magnitude. `autocorr[0]` is lag zero.
pub fn choose_bin_size<T: Scalar>(autocorr: &[T], threshold: T) -> BinChoice {
    assert!(!autocorr.is_empty(), "autocorrelation sequence is empty");
    let max_lag = autocorr.len() - 1;
    let mut n = autocorr.len();
    for lag in (1..autocorr.len()).rev() {
        if autocorr[lag].abs() < threshold {
            n = lag;
        } else {
            break;
        }
    }
    if n > max_lag {
        BinChoice {
            n: max_lag + 1,
            converged: false,
        }
    } else {
        BinChoice { n, converged: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{EventKind::*, Side::*};

    fn ev(ts: i64, kind: EventKind, side: Side, size: u64, bid: i64, ask: i64) -> LobEvent {
        LobEvent {
            ts_ns: ts,
            day: 0,
            kind,
            side,
            size,
            best_bid: bid,
            best_ask: ask,
            promoted: false,
        }
    }

    #[test]
    fn trade_and_refill_up_move() {
        let tape = EventTape::new(vec![
            ev(10, LimitOrder, Bid, 1, 100, 101),
            ev(20, MarketOrder, Ask, 3, 100, 102),
            ev(30, LimitOrder, Bid, 2, 101, 102),
        ]);
        let recs = detect_significant_changes::<f64>(&tape).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].ret, 1.0);
        assert_eq!(recs[0].v_ex_a, 3.0);
        assert_eq!(recs[0].v_lo_b, 3.0);
        assert_eq!(recs[0].dt, 30e-9);
    }

    #[test]
    fn bounce_is_filtered() {
        let tape = EventTape::new(vec![
            ev(10, LimitOrder, Bid, 1, 100, 101),
            ev(20, MarketOrder, Bid, 3, 99, 101),
            ev(30, LimitOrder, Bid, 2, 100, 101),
        ]);
        assert!(detect_significant_changes::<f64>(&tape).unwrap().is_empty());
    }

    #[test]
    fn promoted_volume_is_excluded() {
        let mut promoted = ev(25, LimitOrder, Bid, 9, 99, 101);
        promoted.promoted = true;
        let tape = EventTape::new(vec![
            ev(10, LimitOrder, Ask, 1, 100, 101),
            ev(20, MarketOrder, Bid, 3, 99, 101),
            promoted,
            ev(30, LimitOrder, Ask, 2, 99, 100),
        ]);
        let recs = detect_significant_changes::<f64>(&tape).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].ret, -1.0);
        assert_eq!(recs[0].v_lo_b, 0.0);
        assert_eq!(recs[0].v_lo_a, 3.0);
        assert_eq!(recs[0].v_ex_b, 3.0);
    }

    #[test]
    fn never_stable_tape_has_no_quotes() {
        let tape = EventTape::new(vec![ev(10, LimitOrder, Bid, 1, 100, 103)]);
        assert_eq!(detect_significant_changes::<f64>(&tape), Err(CoarseError::NoQuotes));
        assert!(detect_significant_changes::<f64>(&EventTape::new(vec![])).unwrap().is_empty());
    }

    #[test]
    fn long_wide_spread_is_flagged() {
        let mut evs = vec![ev(0, LimitOrder, Bid, 1, 100, 101)];
        for i in 0..60 {
            evs.push(ev(1 + i, LimitOrder, Bid, 1, 100, 104));
        }
        evs.push(ev(100, LimitOrder, Bid, 1, 103, 104));
        let (recs, rep) = detect_with_report::<f64>(&EventTape::new(evs), &DetectionOptions::default()).unwrap();
        assert_eq!(recs[0].ret, 3.0);
        assert_eq!(rep.wide_spread_episodes.len(), 1);
        assert_eq!(rep.wide_spread_episodes[0].events, 60);
    }

    fn rec(day: u32, dt: f64, ex_a: f64, ret: f64) -> PriceChangeRecord<f64> {
        PriceChangeRecord {
            day,
            index: 0,
            t_ns: 0,
            dt,
            v_lo_b: 0.0,
            v_lo_a: 0.0,
            v_c_b: 0.0,
            v_c_a: 0.0,
            v_ex_b: 0.0,
            v_ex_a: ex_a,
            ret,
            span: 1,
        }
    }

    #[test]
    fn binning_sums_and_drops_remainder() {
        let two = vec![rec(0, 1.0, 3.0, 1.0), rec(0, 2.0, 4.0, -1.0)];
        let b = bin_records(&two, 2);
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].dt, b[0].v_ex_a, b[0].ret, b[0].span), (3.0, 7.0, 0.0, 2));

        let many: Vec<_> = (0..45)
            .map(|i| PriceChangeRecord { index: i, ..rec(0, 1.0, 1.0, 1.0) })
            .collect();
        assert_eq!(bin_records(&many, 20).len(), 2);
        assert_eq!(bin_records(&many, 1), many);

        // bins never straddle days
        let split: Vec<_> = (0..30).map(|i| rec(i / 15, 1.0, 1.0, 1.0)).collect();
        assert_eq!(bin_records(&split, 10).len(), 2);
    }

    #[test]
    fn bin_choice() {
        let white = [1.0, 0.003, -0.002, 0.001];
        assert_eq!(choose_bin_size(&white, 0.01), BinChoice { n: 1, converged: true });
        let geo: Vec<f64> = (0..=40).map(|l| 0.8f64.powi(l)).collect();
        assert_eq!(choose_bin_size(&geo, 0.01), BinChoice { n: 21, converged: true });
        let slow: Vec<f64> = (0..=10).map(|l| 0.9f64.powi(l)).collect();
        assert_eq!(choose_bin_size(&slow, 0.01), BinChoice { n: 11, converged: false });
    }

    #[test]
    fn autocorrelation_needs_data() {
        let r = vec![rec(0, 1.0, 0.0, 1.0); 3];
        assert!(matches!(
            return_autocorrelation(&r, 5),
            Err(CoarseError::InsufficientData { .. })
        ));
    }
}
