//! The 24 solar terms and their hierarchical one-hot code.
//!
//! A term is identified by its index in the solar year, starting at Li Chun
//! (early February). Seasons are consecutive blocks of six terms, so a term's
//! code is a 4-bit season one-hot followed by a 6-bit position one-hot.

use std::fmt;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use serde::Deserialize;

use crate::error::{Error, Result};

pub const TERM_COUNT: usize = 24;
pub const SEASON_COUNT: usize = 4;
pub const TERMS_PER_SEASON: usize = 6;
/// Width of an encoded term: season block plus position block.
pub const CODE_WIDTH: usize = SEASON_COUNT + TERMS_PER_SEASON;

pub const TERM_NAMES: [&str; TERM_COUNT] = [
    "Li Chun",
    "Yu Shui",
    "Jing Zhe",
    "Chun Fen",
    "Qing Ming",
    "Gu Yu",
    "Li Xia",
    "Xiao Man",
    "Mang Zhong",
    "Xia Zhi",
    "Xiao Shu",
    "Da Shu",
    "Li Qiu",
    "Chu Shu",
    "Bai Lu",
    "Qiu Fen",
    "Han Lu",
    "Shuang Jiang",
    "Li Dong",
    "Xiao Xue",
    "Da Xue",
    "Dong Zhi",
    "Xiao Han",
    "Da Han",
];

/// Approximate civil start dates (month, day) of each term, Li Chun first.
const DEFAULT_BOUNDARIES: [(u32, u32); TERM_COUNT] = [
    (2, 4),
    (2, 19),
    (3, 6),
    (3, 21),
    (4, 5),
    (4, 20),
    (5, 6),
    (5, 21),
    (6, 6),
    (6, 21),
    (7, 7),
    (7, 23),
    (8, 8),
    (8, 23),
    (9, 8),
    (9, 23),
    (10, 8),
    (10, 23),
    (11, 7),
    (11, 22),
    (12, 7),
    (12, 22),
    (1, 6),
    (1, 20),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SolarTerm(u8);

impl SolarTerm {
    pub fn new(index: usize) -> Result<Self> {
        if index < TERM_COUNT {
            Ok(Self(index as u8))
        } else {
            Err(Error::InvalidInput(format!(
                "solar term index {index} out of range 0..{TERM_COUNT}"
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = SolarTerm> {
        (0..TERM_COUNT as u8).map(SolarTerm)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        TERM_NAMES[self.index()]
    }

    pub fn season(self) -> usize {
        self.index() / TERMS_PER_SEASON
    }

    pub fn position_in_season(self) -> usize {
        self.index() % TERMS_PER_SEASON
    }

    pub fn next(self) -> SolarTerm {
        SolarTerm(((self.index() + 1) % TERM_COUNT) as u8)
    }

    pub fn from_name(name: &str) -> Option<SolarTerm> {
        TERM_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| SolarTerm(i as u8))
    }
}

impl fmt::Display for SolarTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Two-hot code of a solar term: one bit in `[0, 4)` for the season and one
/// bit in `[4, 10)` for the position within the season.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SolarTermVector(pub [u8; CODE_WIDTH]);

impl SolarTermVector {
    pub fn bits(&self) -> &[u8; CODE_WIDTH] {
        &self.0
    }

    pub fn to_f64(&self) -> [f64; CODE_WIDTH] {
        self.0.map(f64::from)
    }

    /// Exactly one bit set in each block, all entries 0 or 1.
    pub fn is_valid(&self) -> bool {
        let bits = &self.0;
        bits.iter().all(|&b| b <= 1)
            && bits[..SEASON_COUNT].iter().filter(|&&b| b == 1).count() == 1
            && bits[SEASON_COUNT..].iter().filter(|&&b| b == 1).count() == 1
    }

    /// Inverse of [`encode_term`] for valid codes.
    pub fn decode(&self) -> Option<SolarTerm> {
        if !self.is_valid() {
            return None;
        }
        let season = self.0[..SEASON_COUNT].iter().position(|&b| b == 1)?;
        let pos = self.0[SEASON_COUNT..].iter().position(|&b| b == 1)?;
        Some(SolarTerm((season * TERMS_PER_SEASON + pos) as u8))
    }
}

pub fn encode_term(term: SolarTerm) -> SolarTermVector {
    let mut bits = [0u8; CODE_WIDTH];
    bits[term.season()] = 1;
    bits[SEASON_COUNT + term.position_in_season()] = 1;
    SolarTermVector(bits)
}

/// Start dates of the 24 terms within a reference year.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermBoundaryTable {
    entries: [(u32, u32); TERM_COUNT],
}

impl Default for TermBoundaryTable {
    fn default() -> Self {
        Self {
            entries: DEFAULT_BOUNDARIES,
        }
    }
}

// Ordering key of a (month, day) pair in a year that begins at Li Chun's
// month. Days are spaced 32 apart per month so Feb 29 needs no special case.
fn raw_key(month: u32, day: u32) -> u32 {
    month * 32 + day
}

impl TermBoundaryTable {
    pub fn new(entries: [(u32, u32); TERM_COUNT]) -> Result<Self> {
        for (i, &(m, d)) in entries.iter().enumerate() {
            // 2024 is a leap year, so Feb 29 is accepted as a boundary.
            if NaiveDate::from_ymd_opt(2024, m, d).is_none() {
                return Err(Error::InvalidInput(format!(
                    "term {i}: invalid month/day {m}/{d}"
                )));
            }
        }
        let table = Self { entries };
        let keys: Vec<u32> = (0..TERM_COUNT).map(|i| table.rotated_key_of(i)).collect();
        if keys[0] != 0 || keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "term boundaries must increase through the year starting at Li Chun".into(),
            ));
        }
        Ok(table)
    }

    pub fn entries(&self) -> &[(u32, u32); TERM_COUNT] {
        &self.entries
    }

    /// Reads an override table from CSV with header `term_index,month,day`.
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            term_index: usize,
            month: u32,
            day: u32,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(Error::csv)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["term_index", "month", "day"] {
            return Err(Error::InvalidInput(
                "boundary file header must be `term_index,month,day`".into(),
            ));
        }
        let mut entries: [Option<(u32, u32)>; TERM_COUNT] = [None; TERM_COUNT];
        let mut rows = 0;
        for rec in rdr.deserialize::<Row>() {
            let row = rec.map_err(Error::csv)?;
            rows += 1;
            let slot = entries.get_mut(row.term_index).ok_or_else(|| {
                Error::InvalidInput(format!("term_index {} out of range", row.term_index))
            })?;
            if slot.replace((row.month, row.day)).is_some() {
                return Err(Error::InvalidInput(format!(
                    "term_index {} listed twice",
                    row.term_index
                )));
            }
        }
        if rows != TERM_COUNT {
            return Err(Error::InvalidInput(format!(
                "boundary file must have {TERM_COUNT} rows, found {rows}"
            )));
        }
        let mut out = [(0, 0); TERM_COUNT];
        for (dst, src) in out.iter_mut().zip(entries) {
            // every slot was filled: 24 distinct in-range indices
            *dst = src.expect("all term indices present");
        }
        Self::new(out)
    }

    fn rotated_key(&self, month: u32, day: u32) -> u32 {
        let (m0, d0) = self.entries[0];
        let year_span = 13 * 32;
        (raw_key(month, day) + year_span - raw_key(m0, d0)) % year_span
    }

    fn rotated_key_of(&self, i: usize) -> u32 {
        let (m, d) = self.entries[i];
        self.rotated_key(m, d)
    }

    /// The term whose `[start, next start)` range contains the date.
    pub fn term_of_date(&self, date: NaiveDate) -> SolarTerm {
        let key = self.rotated_key(date.month(), date.day());
        // entries are sorted by rotated key and the first key is 0
        let idx = (0..TERM_COUNT)
            .rev()
            .find(|&i| self.rotated_key_of(i) <= key)
            .unwrap_or(0);
        SolarTerm(idx as u8)
    }
}

pub fn term_of_date(date: NaiveDate, table: &TermBoundaryTable) -> SolarTerm {
    table.term_of_date(date)
}

/// Row `i` is the code of the term containing `start + i` days.
pub fn encode_date_range(
    start: NaiveDate,
    days: usize,
    table: &TermBoundaryTable,
) -> Vec<SolarTermVector> {
    (0..days as u64)
        .map(|i| {
            let date = start
                .checked_add_days(Days::new(i))
                .expect("date within chrono range");
            encode_term(table.term_of_date(date))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn term(name: &str) -> SolarTerm {
        SolarTerm::from_name(name).unwrap()
    }

    #[test]
    fn published_codes() {
        assert_eq!(
            encode_term(term("Li Chun")).0,
            [1, 0, 0, 0, 1, 0, 0, 0, 0, 0]
        );
        assert_eq!(
            encode_term(term("Qing Ming")).0,
            [1, 0, 0, 0, 0, 0, 0, 0, 1, 0]
        );
        assert_eq!(
            encode_term(term("Da Han")).0,
            [0, 0, 0, 1, 0, 0, 0, 0, 0, 1]
        );
    }

    #[test]
    fn codes_are_valid_and_injective() {
        let codes: Vec<_> = SolarTerm::all().map(encode_term).collect();
        for (t, c) in SolarTerm::all().zip(&codes) {
            assert!(c.is_valid());
            assert_eq!(c.decode(), Some(t));
        }
        let unique: std::collections::HashSet<_> = codes.iter().collect();
        assert_eq!(unique.len(), TERM_COUNT);
    }

    #[test]
    fn default_table_lookups() {
        let table = TermBoundaryTable::default();
        assert_eq!(table.term_of_date(date(2023, 2, 4)), term("Li Chun"));
        assert_eq!(table.term_of_date(date(2023, 1, 25)), term("Da Han"));
        assert_eq!(table.term_of_date(date(2023, 7, 1)), term("Xia Zhi"));
        assert_eq!(table.term_of_date(date(2023, 2, 3)), term("Da Han"));
        assert_eq!(table.term_of_date(date(2024, 2, 29)), term("Yu Shui"));
        assert_eq!(table.term_of_date(date(2023, 12, 31)), term("Dong Zhi"));
        assert_eq!(table.term_of_date(date(2023, 1, 1)), term("Dong Zhi"));
    }

    #[test]
    fn range_encoding() {
        let table = TermBoundaryTable::default();
        let one = encode_date_range(date(2023, 5, 30), 1, &table);
        assert_eq!(
            one,
            vec![encode_term(table.term_of_date(date(2023, 5, 30)))]
        );

        let cross = encode_date_range(date(2023, 2, 3), 2, &table);
        assert_eq!(
            cross,
            vec![encode_term(term("Da Han")), encode_term(term("Li Chun"))]
        );

        let week = encode_date_range(date(2023, 2, 4), 7, &table);
        assert_eq!(week.len(), 7);
        assert!(week.iter().all(|r| *r == encode_term(term("Li Chun"))));
    }

    #[test]
    fn full_year_visits_terms_in_cyclic_order() {
        let table = TermBoundaryTable::default();
        let mut d = date(2023, 2, 4);
        let mut current = table.term_of_date(d);
        let mut seen = vec![current];
        for _ in 0..365 {
            d = d.succ_opt().unwrap();
            let t = table.term_of_date(d);
            if t != current {
                assert_eq!(t, current.next(), "term skipped at {d}");
                current = t;
                seen.push(t);
            }
        }
        // back to Li Chun after a full year
        assert_eq!(seen.len(), TERM_COUNT + 1);
        assert_eq!(*seen.last().unwrap(), term("Li Chun"));
    }

    #[test]
    fn season_and_position() {
        for t in SolarTerm::all() {
            assert_eq!(t.season(), t.index() / 6);
            assert_eq!(t.position_in_season(), t.index() % 6);
        }
        assert!(SolarTerm::new(24).is_err());
    }

    #[test]
    fn csv_override_roundtrip_and_validation() {
        let mut text = String::from("term_index,month,day\n");
        for (i, (m, d)) in DEFAULT_BOUNDARIES.iter().enumerate().rev() {
            text.push_str(&format!("{i},{m},{d}\n"));
        }
        let table = TermBoundaryTable::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(table, TermBoundaryTable::default());

        let short = "term_index,month,day\n0,2,4\n";
        assert!(TermBoundaryTable::from_csv_reader(short.as_bytes()).is_err());

        let mut swapped = DEFAULT_BOUNDARIES;
        swapped.swap(3, 4);
        assert!(TermBoundaryTable::new(swapped).is_err());

        let mut bad = DEFAULT_BOUNDARIES;
        bad[5] = (4, 31);
        assert!(TermBoundaryTable::new(bad).is_err());
    }
}
