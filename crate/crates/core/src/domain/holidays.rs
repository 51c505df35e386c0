use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::network::NodeId;
use super::time::Date;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolidayKind {
    Fixed,
    Flexible,
    Weekend,
}

impl HolidayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HolidayKind::Fixed => "fixed",
            HolidayKind::Flexible => "flexible",
            HolidayKind::Weekend => "weekend",
        }
    }
}

/// What kind of day a date is for a region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayKind {
    Bau,
    Weekend,
    Fixed,
    Flexible,
}

impl DayKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DayKind::Bau => "bau",
            DayKind::Weekend => "weekend",
            DayKind::Fixed => "fixed",
            DayKind::Flexible => "flexible",
        }
    }

    pub fn is_holiday(self) -> bool {
        matches!(self, DayKind::Fixed | DayKind::Flexible)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalendarEntry {
    pub region: NodeId,
    pub date: Date,
    pub kind: HolidayKind,
    pub absenteeism_rate: f64,
}

/// Holiday and weekend entries per (region, date). At most one entry per key.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CalendarEntry>", into = "Vec<CalendarEntry>")]
pub struct HolidayCalendar {
    entries: BTreeMap<(NodeId, Date), CalendarEntry>,
}

impl HolidayCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: CalendarEntry) -> Result<()> {
        if !(0.0..=1.0).contains(&entry.absenteeism_rate) {
            return Err(Error::invalid(format!(
                "absenteeism rate {} outside [0, 1] for region {} on {}",
                entry.absenteeism_rate, entry.region, entry.date
            )));
        }
        if self.entries.insert((entry.region, entry.date), entry).is_some() {
            return Err(Error::invalid(format!("duplicate calendar entry for region {} on {}", entry.region, entry.date)));
        }
        Ok(())
    }

    /// Adds a weekend entry for every Saturday and Sunday in `[from, to)` that
    /// has no entry yet.
    pub fn add_weekends(&mut self, region: NodeId, from: Date, to: Date, absenteeism_rate: f64) -> Result<()> {
        for d in from.days()..to.days() {
            let date = Date(d);
            if date.is_weekend() && !self.entries.contains_key(&(region, date)) {
                self.insert(CalendarEntry { region, date, kind: HolidayKind::Weekend, absenteeism_rate })?;
            }
        }
        Ok(())
    }

    pub fn get(&self, region: NodeId, date: Date) -> Option<&CalendarEntry> {
        self.entries.get(&(region, date))
    }

    /// Calendar entries take precedence; otherwise Saturday and Sunday are
    /// weekends and everything else is business as usual.
    pub fn day_kind(&self, region: NodeId, date: Date) -> DayKind {
        match self.get(region, date).map(|e| e.kind) {
            Some(HolidayKind::Fixed) => DayKind::Fixed,
            Some(HolidayKind::Flexible) => DayKind::Flexible,
            Some(HolidayKind::Weekend) => DayKind::Weekend,
            None if date.is_weekend() => DayKind::Weekend,
            None => DayKind::Bau,
        }
    }

    /// Whether a holiday falls on the day before or after a weekend.
    pub fn adjacent_to_weekend(&self, region: NodeId, date: Date) -> bool {
        self.day_kind(region, date).is_holiday()
            && [date.offset(-1), date.offset(1)].iter().any(|d| self.day_kind(region, *d) == DayKind::Weekend)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CalendarEntry> {
        self.entries.values()
    }

    /// Entries of one region, ascending by date.
    pub fn region_entries(&self, region: NodeId) -> impl DoubleEndedIterator<Item = &CalendarEntry> {
        self.entries.range((region, Date(i32::MIN))..=(region, Date(i32::MAX))).map(|(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `region,date,kind,absenteeism_rate` rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut cal = HolidayCalendar::new();
        for row in rdr.deserialize::<CsvRow>() {
            let row = row?;
            cal.insert(CalendarEntry {
                region: NodeId(row.region),
                date: Date::parse(&row.date)?,
                kind: row.kind,
                absenteeism_rate: row.absenteeism_rate,
            })?;
        }
        Ok(cal)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for e in self.entries.values() {
            w.serialize(CsvRow { region: e.region.0, date: e.date.to_string(), kind: e.kind, absenteeism_rate: e.absenteeism_rate })?;
        }
        w.flush().map_err(|e| Error::io("calendar.csv", e))?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    region: u32,
    date: String,
    kind: HolidayKind,
    absenteeism_rate: f64,
}

impl TryFrom<Vec<CalendarEntry>> for HolidayCalendar {
    type Error = Error;
    fn try_from(v: Vec<CalendarEntry>) -> Result<Self> {
        let mut cal = HolidayCalendar::new();
        for e in v {
            cal.insert(e)?;
        }
        Ok(cal)
    }
}

impl From<HolidayCalendar> for Vec<CalendarEntry> {
    fn from(c: HolidayCalendar) -> Self {
        c.entries.into_values().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(day: i32, kind: HolidayKind, rate: f64) -> CalendarEntry {
        CalendarEntry { region: NodeId(3), date: Date(day), kind, absenteeism_rate: rate }
    }

    #[test]
    fn one_entry_per_region_date() {
        let mut cal = HolidayCalendar::new();
        cal.insert(entry(10, HolidayKind::Fixed, 0.5)).unwrap();
        assert!(cal.insert(entry(10, HolidayKind::Flexible, 0.2)).is_err());
        assert!(cal.insert(entry(11, HolidayKind::Flexible, 1.2)).is_err());
    }

    #[test]
    fn day_kinds() {
        let mut cal = HolidayCalendar::new();
        // 1970-01-05 is a Monday.
        cal.insert(entry(4, HolidayKind::Flexible, 0.4)).unwrap();
        assert_eq!(cal.day_kind(NodeId(3), Date(4)), DayKind::Flexible);
        assert_eq!(cal.day_kind(NodeId(3), Date(3)), DayKind::Weekend);
        assert_eq!(cal.day_kind(NodeId(3), Date(5)), DayKind::Bau);
        assert_eq!(cal.day_kind(NodeId(2), Date(4)), DayKind::Bau);
        assert!(cal.adjacent_to_weekend(NodeId(3), Date(4)));
    }

    #[test]
    fn csv_round_trip() {
        let mut cal = HolidayCalendar::new();
        cal.insert(entry(4, HolidayKind::Flexible, 0.4)).unwrap();
        cal.add_weekends(NodeId(3), Date(0), Date(14), 0.1).unwrap();
        let mut buf = Vec::new();
        cal.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("region,date,kind,absenteeism_rate\n3,1970-01-03,weekend,0.1"));
        assert_eq!(HolidayCalendar::read_csv(&buf[..]).unwrap(), cal);
    }
}
