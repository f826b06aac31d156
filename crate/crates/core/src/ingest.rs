//! Best-level event tapes: CSV format, streaming reader, writer and validation.
//!
//! Each row is `ts_ns,day,kind,side,size,best_bid,best_ask,promoted` where
//! the quotes are the best bid/ask *after* the event, in ticks. For market
//! orders `side` names the book side that was executed against, so a buy
//! market order is `MO,A`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TAPE_HEADER: [&str; 8] = ["ts_ns", "day", "kind", "side", "size", "best_bid", "best_ask", "promoted"];

const NS_PER_MINUTE: i64 = 60_000_000_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("crossed book at line {line}: bid {bid} >= ask {ask}")]
    CrossedBook { line: u64, bid: i64, ask: i64 },
    #[error("timestamp goes backwards at line {line}")]
    NonMonotonicTime { line: u64 },
    #[error("day {day} reappears at line {line} after other days")]
    NonContiguousDay { line: u64, day: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    LimitOrder,
    Cancellation,
    MarketOrder,
}

impl EventKind {
    pub fn code(self) -> &'static str {
        match self {
            EventKind::LimitOrder => "LO",
            EventKind::Cancellation => "CO",
            EventKind::MarketOrder => "MO",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "LO" => Some(EventKind::LimitOrder),
            "CO" => Some(EventKind::Cancellation),
            "MO" => Some(EventKind::MarketOrder),
            _ => None,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn code(self) -> &'static str {
        match self {
            Side::Bid => "B",
            Side::Ask => "A",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "B" => Some(Side::Bid),
            "A" => Some(Side::Ask),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LobEvent {
    /// Nanoseconds since session open.
    pub ts_ns: i64,
    pub day: u32,
    pub kind: EventKind,
    pub side: Side,
    pub size: u64,
    pub best_bid: i64,
    pub best_ask: i64,
    /// Limit volume that reached the best only because a deeper queue moved up.
    pub promoted: bool,
}

impl LobEvent {
    pub fn spread(&self) -> i64 {
        self.best_ask - self.best_bid
    }
}

/// Wall-clock session bounds, as nanoseconds after midnight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionClock {
    pub open_ns: i64,
    pub close_ns: i64,
}

impl Default for SessionClock {
    fn default() -> Self {
        Self {
            open_ns: 9 * 60 * NS_PER_MINUTE,
            close_ns: (17 * 60 + 30) * NS_PER_MINUTE,
        }
    }
}

impl SessionClock {
    pub fn length_ns(&self) -> i64 {
        self.close_ns - self.open_ns
    }

    /// Number of whole minutes in the session (partial last minute included).
    pub fn minutes(&self) -> usize {
        ((self.length_ns() + NS_PER_MINUTE - 1) / NS_PER_MINUTE).max(0) as usize
    }

    /// Minute bin of a timestamp measured from session open, clamped to the session.
    pub fn minute_of(&self, ts_ns: i64) -> usize {
        let m = (ts_ns.max(0) / NS_PER_MINUTE) as usize;
        m.min(self.minutes().saturating_sub(1))
    }

    /// Session minute at which a wall-clock time `hh:mm` falls.
    pub fn minute_at_clock(&self, hour: u32, minute: u32) -> usize {
        let wall = (hour as i64 * 60 + minute as i64) * NS_PER_MINUTE;
        ((wall - self.open_ns).max(0) / NS_PER_MINUTE) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTape {
    pub events: Vec<LobEvent>,
    pub session: SessionClock,
    pub tick_size: f64,
}

impl EventTape {
    pub fn new(events: Vec<LobEvent>) -> Self {
        Self {
            events,
            session: SessionClock::default(),
            tick_size: 1.0,
        }
    }

    /// Events grouped by day, in tape order.
    pub fn days(&self) -> Vec<(u32, &[LobEvent])> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.events.len() {
            if i == self.events.len() || self.events[i].day != self.events[start].day {
                if start < i {
                    out.push((self.events[start].day, &self.events[start..i]));
                }
                start = i;
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapeFormat {
    Csv,
    CsvGz,
}

impl TapeFormat {
    pub fn from_path(path: &Path) -> Self {
        if path.to_string_lossy().ends_with(".gz") {
            TapeFormat::CsvGz
        } else {
            TapeFormat::Csv
        }
    }
}

fn open_source<'a, R: Read + 'a>(source: R, format: TapeFormat) -> Box<dyn Read + 'a> {
    match format {
        TapeFormat::Csv => Box::new(source),
        TapeFormat::CsvGz => Box::new(MultiGzDecoder::new(source)),
    }
}

fn parse_row(rec: &csv::StringRecord, line: u64) -> Result<LobEvent, IngestError> {
    let bad = |reason: String| IngestError::MalformedRow { line, reason };
    if rec.len() != 8 {
        return Err(bad(format!("expected 8 fields, found {}", rec.len())));
    }
    let int = |i: usize| -> Result<i64, IngestError> {
        rec[i]
            .parse::<i64>()
            .map_err(|_| bad(format!("field {} is not an integer: {:?}", TAPE_HEADER[i], &rec[i])))
    };
    let ts_ns = int(0)?;
    let day = u32::try_from(int(1)?).map_err(|_| bad("day out of range".into()))?;
    let kind = EventKind::parse(&rec[2]).ok_or_else(|| bad(format!("unknown kind {:?}", &rec[2])))?;
    let side = Side::parse(&rec[3]).ok_or_else(|| bad(format!("unknown side {:?}", &rec[3])))?;
    let size = int(4)?;
    if size <= 0 {
        return Err(bad("size must be positive".into()));
    }
    let best_bid = int(5)?;
    let best_ask = int(6)?;
    let promoted = match &rec[7] {
        "true" => true,
        "false" => false,
        other => return Err(bad(format!("promoted must be true/false, got {other:?}"))),
    };
    if best_ask <= best_bid {
        return Err(IngestError::CrossedBook {
            line,
            bid: best_bid,
            ask: best_ask,
        });
    }
    Ok(LobEvent {
        ts_ns,
        day,
        kind,
        side,
        size: size as u64,
        best_bid,
        best_ask,
        promoted,
    })
}

/// All events of one trading day.
#[derive(Clone, Debug, PartialEq)]
pub struct DayEvents {
    pub day: u32,
    pub events: Vec<LobEvent>,
}

/// Single-pass reader yielding one day at a time, so memory is bounded by
/// the largest day.
pub struct DayReader<'a> {
    records: csv::StringRecordsIntoIter<Box<dyn Read + 'a>>,
    pending: Option<(LobEvent, u64)>,
    finished_days: HashSet<u32>,
    started: bool,
    failed: bool,
}

impl<'a> DayReader<'a> {
    pub fn new<R: Read + 'a>(source: R, format: TapeFormat) -> Self {
        let reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(open_source(source, format));
        Self {
            records: reader.into_records(),
            pending: None,
            finished_days: HashSet::new(),
            started: false,
            failed: false,
        }
    }

    fn next_event(&mut self) -> Option<Result<(LobEvent, u64), IngestError>> {
        loop {
            let rec = match self.records.next()? {
                Ok(r) => r,
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    return Some(Err(match e.into_kind() {
                        csv::ErrorKind::Io(io) => IngestError::Io(io),
                        other => IngestError::MalformedRow {
                            line,
                            reason: format!("{other:?}"),
                        },
                    }));
                }
            };
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if !self.started {
                self.started = true;
                if rec.get(0) == Some("ts_ns") {
                    if rec.iter().ne(TAPE_HEADER.iter().copied()) {
                        return Some(Err(IngestError::MalformedRow {
                            line,
                            reason: "unexpected header".into(),
                        }));
                    }
                    continue;
                }
            }
            if rec.len() == 1 && rec[0].is_empty() {
                continue;
            }
            return Some(parse_row(&rec, line).map(|e| (e, line)));
        }
    }
}

impl Iterator for DayReader<'_> {
    type Item = Result<DayEvents, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let (first, first_line) = match self.pending.take() {
            Some(p) => p,
            None => match self.next_event()? {
                Ok(p) => p,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            },
        };
        if self.finished_days.contains(&first.day) {
            self.failed = true;
            return Some(Err(IngestError::NonContiguousDay {
                line: first_line,
                day: first.day,
            }));
        }
        let day = first.day;
        let mut events = vec![first];
        loop {
            match self.next_event() {
                None => break,
                Some(Err(e)) => {
                    self.failed = true;
                    return Some(Err(e));
                }
                Some(Ok((ev, line))) => {
                    if ev.day != day {
                        self.pending = Some((ev, line));
                        break;
                    }
                    if ev.ts_ns < events[events.len() - 1].ts_ns {
                        self.failed = true;
                        return Some(Err(IngestError::NonMonotonicTime { line }));
                    }
                    events.push(ev);
                }
            }
        }
        self.finished_days.insert(day);
        Some(Ok(DayEvents { day, events }))
    }
}

/// Parses a whole tape with the default session clock and a unit tick.
pub fn parse_event_tape<R: Read>(source: R, format: TapeFormat) -> Result<EventTape, IngestError> {
    let mut events = Vec::new();
    for day in DayReader::new(source, format) {
        events.extend(day?.events);
    }
    Ok(EventTape::new(events))
}

pub fn read_tape_file(path: &Path) -> Result<EventTape, IngestError> {
    let file = File::open(path)?;
    parse_event_tape(BufReader::new(file), TapeFormat::from_path(path))
}

pub fn write_tape<W: Write>(tape: &EventTape, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    let to_io = |e: csv::Error| IngestError::Io(std::io::Error::other(e));
    w.write_record(TAPE_HEADER).map_err(to_io)?;
    for e in &tape.events {
        w.write_record([
            e.ts_ns.to_string().as_str(),
            e.day.to_string().as_str(),
            e.kind.code(),
            e.side.code(),
            e.size.to_string().as_str(),
            e.best_bid.to_string().as_str(),
            e.best_ask.to_string().as_str(),
            if e.promoted { "true" } else { "false" },
        ])
        .map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a tape, gzip-compressed when the path ends in `.gz`.
pub fn write_tape_file(path: &Path, tape: &EventTape) -> Result<(), IngestError> {
    let file = BufWriter::new(File::create(path)?);
    match TapeFormat::from_path(path) {
        TapeFormat::Csv => write_tape(tape, file),
        TapeFormat::CsvGz => {
            let mut enc = GzEncoder::new(file, Compression::default());
            write_tape(tape, &mut enc)?;
            enc.finish()?.flush()?;
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    CrossedBook,
    NonMonotonicTime,
    ZeroSize,
    NonContiguousDay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Position of the offending event in the tape.
    pub index: usize,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_events: usize,
    /// Counts indexed by `[kind][side]` with kinds LO, CO, MO and sides B, A.
    pub by_kind_side: [[usize; 2]; 3],
    pub events_per_day: BTreeMap<u32, usize>,
    /// Events whose post-event quotes differ from the previous event's.
    pub quote_changes: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_tape(tape: &EventTape) -> ValidationReport {
    let mut rep = ValidationReport {
        n_events: tape.events.len(),
        ..Default::default()
    };
    let mut seen_days: HashSet<u32> = HashSet::new();
    let mut prev: Option<&LobEvent> = None;
    for (i, e) in tape.events.iter().enumerate() {
        rep.by_kind_side[e.kind.index()][e.side as usize] += 1;
        *rep.events_per_day.entry(e.day).or_insert(0) += 1;
        if e.best_ask <= e.best_bid {
            rep.violations.push(Violation {
                index: i,
                kind: ViolationKind::CrossedBook,
            });
        }
        if e.size == 0 {
            rep.violations.push(Violation {
                index: i,
                kind: ViolationKind::ZeroSize,
            });
        }
        match prev {
            Some(p) if p.day == e.day => {
                if e.ts_ns < p.ts_ns {
                    rep.violations.push(Violation {
                        index: i,
                        kind: ViolationKind::NonMonotonicTime,
                    });
                }
                if (p.best_bid, p.best_ask) != (e.best_bid, e.best_ask) {
                    rep.quote_changes += 1;
                }
            }
            _ => {
                if !seen_days.insert(e.day) {
                    rep.violations.push(Violation {
                        index: i,
                        kind: ViolationKind::NonContiguousDay,
                    });
                }
            }
        }
        prev = Some(e);
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_str(s: &str) -> Result<EventTape, IngestError> {
        parse_event_tape(s.as_bytes(), TapeFormat::Csv)
    }

    #[test]
    fn empty_input_gives_empty_tape() {
        assert!(parse_str("").unwrap().events.is_empty());
        assert!(parse_str("ts_ns,day,kind,side,size,best_bid,best_ask,promoted\n")
            .unwrap()
            .events
            .is_empty());
    }

    #[test]
    fn single_row() {
        let tape = parse_str("0,0,LO,B,5,100,101,false\n").unwrap();
        assert_eq!(tape.events.len(), 1);
        let e = tape.events[0];
        assert_eq!(e.kind, EventKind::LimitOrder);
        assert_eq!(e.side, Side::Bid);
        assert_eq!((e.best_bid, e.best_ask, e.size), (100, 101, 5));
    }

    #[test]
    fn crossed_book_is_rejected() {
        let err = parse_str("0,0,LO,B,5,101,100,false\n").unwrap_err();
        assert!(matches!(err, IngestError::CrossedBook { line: 1, .. }));
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "ts_ns,day,kind,side,size,best_bid,best_ask,promoted\n0,0,LO,B,5,100,101,false\n1,0,XX,B,5,100,101,false\n";
        match parse_str(text).unwrap_err() {
            IngestError::MalformedRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_str("0,0,LO,B,0,100,101,false\n").unwrap_err(),
            IngestError::MalformedRow { .. }
        ));
        assert!(matches!(
            parse_str("0,0,LO,B,3,100,101\n").unwrap_err(),
            IngestError::MalformedRow { .. }
        ));
    }

    #[test]
    fn time_regression_and_split_days() {
        let back = "5,0,LO,B,1,100,101,false\n4,0,LO,B,1,100,101,false\n";
        assert!(matches!(parse_str(back).unwrap_err(), IngestError::NonMonotonicTime { line: 2 }));
        let split = "0,0,LO,B,1,100,101,false\n0,1,LO,B,1,100,101,false\n1,0,LO,B,1,100,101,false\n";
        assert!(matches!(parse_str(split).unwrap_err(), IngestError::NonContiguousDay { day: 0, .. }));
    }

    #[test]
    fn day_reader_streams_days() {
        let text = "0,0,LO,B,1,100,101,false\n1,0,CO,A,2,100,101,false\n0,1,MO,A,3,100,101,false\n";
        let days: Vec<DayEvents> = DayReader::new(text.as_bytes(), TapeFormat::Csv)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].events.len(), 2);
        assert_eq!(days[1].events[0].kind, EventKind::MarketOrder);
    }

    fn ev(ts: i64, day: u32) -> LobEvent {
        LobEvent {
            ts_ns: ts,
            day,
            kind: EventKind::LimitOrder,
            side: Side::Bid,
            size: 1,
            best_bid: 100,
            best_ask: 101,
            promoted: false,
        }
    }

    #[test]
    fn validation_counts_and_violations() {
        let clean = EventTape::new(vec![ev(0, 0), ev(1, 0), ev(2, 0)]);
        let rep = validate_tape(&clean);
        assert_eq!(rep.n_events, 3);
        assert!(rep.is_clean());
        assert_eq!(rep.by_kind_side[0][0], 3);

        let dirty = EventTape::new(vec![ev(0, 0), ev(5, 0), ev(4, 0)]);
        let rep = validate_tape(&dirty);
        assert_eq!(
            rep.violations,
            vec![Violation {
                index: 2,
                kind: ViolationKind::NonMonotonicTime
            }]
        );
    }

    #[test]
    fn gzip_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.csv.gz");
        let tape = EventTape::new(vec![ev(0, 0), ev(3, 0), ev(1, 2)]);
        write_tape_file(&path, &tape).unwrap();
        assert_eq!(read_tape_file(&path).unwrap(), tape);
    }

    fn arb_event() -> impl Strategy<Value = (i64, u8, u8, u64, i64, i64, bool)> {
        (0i64..1_000_000, 0u8..3, 0u8..2, 1u64..10_000, -500i64..500, 1i64..5, any::<bool>())
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(rows in proptest::collection::vec((0u32..4, arb_event()), 0..60)) {
            let mut rows = rows;
            rows.sort_by_key(|(d, e)| (*d, e.0));
            let events: Vec<LobEvent> = rows
                .into_iter()
                .map(|(day, (ts, k, s, size, bid, spread, promoted))| LobEvent {
                    ts_ns: ts,
                    day,
                    kind: [EventKind::LimitOrder, EventKind::Cancellation, EventKind::MarketOrder][k as usize],
                    side: [Side::Bid, Side::Ask][s as usize],
                    size,
                    best_bid: bid,
                    best_ask: bid + spread,
                    promoted,
                })
                .collect();
            let tape = EventTape::new(events);
            let mut buf = Vec::new();
            write_tape(&tape, &mut buf).unwrap();
            let back = parse_event_tape(buf.as_slice(), TapeFormat::Csv).unwrap();
            prop_assert_eq!(back, tape);
        }
    }
}
