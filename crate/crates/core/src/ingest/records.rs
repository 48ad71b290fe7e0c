use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::graph::Day;

use super::IngestError;

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!("unknown {} `{}`", stringify!($name), s)),
                }
            }
        }
    };
}

string_enum!(Sex { F => "F", M => "M" });
string_enum!(Os { Ios => "iOS", Android => "Android" });
string_enum!(Tracker {
    AppleWatch => "AppleWatch",
    Fitbit => "Fitbit",
    Garmin => "Garmin",
    SamsungWatch => "SamsungWatch",
    HpbTracker => "HPBTracker",
    Other => "Other",
});
string_enum!(Program { Nsc => "NSC", Edsh => "EDSH" });

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantProfile {
    pub participant: String,
    pub age_years: u32,
    pub sex: Sex,
    pub os: Os,
    pub tracker: Tracker,
    pub enrolled_programs: BTreeSet<Program>,
    pub bmi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyActivity {
    pub steps: u32,
    pub mvpa_minutes: f64,
    pub synced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorRecord {
    pub participant: String,
    pub day: Day,
    pub steps: u32,
    pub mvpa_minutes: f64,
    pub synced: bool,
}

impl BehaviorRecord {
    pub fn activity(&self) -> DailyActivity {
        DailyActivity {
            steps: self.steps,
            mvpa_minutes: self.mvpa_minutes,
            synced: self.synced,
        }
    }
}

/// Trailing-window statistics. Days without a synced record count as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowStats {
    pub len: u32,
    pub steps_sum: f64,
    pub steps_max: f64,
    pub mvpa_sum: f64,
    pub mvpa_max: f64,
    pub synced_days: u32,
}

impl WindowStats {
    pub fn steps_mean(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.steps_sum / self.len as f64
        }
    }

    pub fn mvpa_mean(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.mvpa_sum / self.len as f64
        }
    }
}

pub type ParticipantHistory = BTreeMap<Day, DailyActivity>;

/// Daily activity for all participants, one record per (participant, day).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BehaviorHistory {
    by_participant: BTreeMap<String, ParticipantHistory>,
    last_day: Option<Day>,
}

impl BehaviorHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = BehaviorRecord>) -> Result<Self, IngestError> {
        let mut h = Self::new();
        for r in records {
            h.insert(r)?;
        }
        Ok(h)
    }

    /// Inserts a record. Re-inserting an identical record is a no-op; a
    /// conflicting record for the same (participant, day) is an error.
    pub fn insert(&mut self, r: BehaviorRecord) -> Result<(), IngestError> {
        if !r.mvpa_minutes.is_finite() || r.mvpa_minutes < 0.0 {
            return Err(IngestError::InvalidRecord {
                participant: r.participant,
                day: r.day,
                reason: "mvpa minutes must be finite and non-negative".into(),
            });
        }
        let days = self.by_participant.entry(r.participant.clone()).or_default();
        let activity = r.activity();
        match days.get(&r.day) {
            Some(existing) if *existing == activity => return Ok(()),
            Some(_) => {
                return Err(IngestError::DuplicateRecord {
                    participant: r.participant,
                    day: r.day,
                })
            }
            None => {
                days.insert(r.day, activity);
            }
        }
        self.last_day = Some(self.last_day.map_or(r.day, |d| d.max(r.day)));
        Ok(())
    }

    pub fn participant(&self, key: &str) -> Option<&ParticipantHistory> {
        self.by_participant.get(key)
    }

    pub fn participants(&self) -> impl Iterator<Item = &str> {
        self.by_participant.keys().map(String::as_str)
    }

    /// Last day covered by any record.
    pub fn last_day(&self) -> Option<Day> {
        self.last_day
    }

    pub fn records(&self) -> impl Iterator<Item = BehaviorRecord> + '_ {
        self.by_participant.iter().flat_map(|(p, days)| {
            days.iter().map(move |(day, a)| BehaviorRecord {
                participant: p.clone(),
                day: *day,
                steps: a.steps,
                mvpa_minutes: a.mvpa_minutes,
                synced: a.synced,
            })
        })
    }

    pub fn len(&self) -> usize {
        self.by_participant.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Statistics over the `len` days `[end - len, end)`.
pub fn window_stats(history: Option<&ParticipantHistory>, end: Day, len: u32) -> WindowStats {
    let mut stats = WindowStats {
        len,
        ..Default::default()
    };
    let Some(history) = history else {
        return stats;
    };
    let start = end - chrono::Duration::days(len as i64);
    for (_, a) in history.range(start..end) {
        if !a.synced {
            continue;
        }
        stats.synced_days += 1;
        stats.steps_sum += a.steps as f64;
        stats.steps_max = stats.steps_max.max(a.steps as f64);
        stats.mvpa_sum += a.mvpa_minutes;
        stats.mvpa_max = stats.mvpa_max.max(a.mvpa_minutes);
    }
    stats
}

pub(crate) fn tsv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .quoting(false)
        .from_reader(r)
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, line: u64) -> Result<&'a str, IngestError> {
    rec.get(i).ok_or_else(|| IngestError::Parse {
        line,
        message: format!("missing field {}", i + 1),
    })
}

fn parse<T: FromStr>(s: &str, what: &str, line: u64) -> Result<T, IngestError> {
    s.parse().map_err(|_| IngestError::Parse {
        line,
        message: format!("bad {what} `{s}`"),
    })
}

/// Reads `participant, day, steps, mvpa, synced` records.
pub fn read_behavior<R: Read>(r: R) -> Result<Vec<BehaviorRecord>, IngestError> {
    let mut out = Vec::new();
    for rec in tsv_reader(r).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 5 {
            return Err(IngestError::Parse {
                line,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let day = Day::parse_from_str(field(&rec, 1, line)?, "%Y-%m-%d").map_err(|_| IngestError::Parse {
            line,
            message: format!("bad day `{}`", &rec[1]),
        })?;
        let synced = match &rec[4] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(IngestError::Parse {
                    line,
                    message: format!("bad synced flag `{other}`"),
                })
            }
        };
        let mvpa: f64 = parse(&rec[3], "mvpa minutes", line)?;
        if !mvpa.is_finite() || mvpa < 0.0 {
            return Err(IngestError::Parse {
                line,
                message: format!("bad mvpa minutes `{}`", &rec[3]),
            });
        }
        out.push(BehaviorRecord {
            participant: rec[0].to_string(),
            day,
            steps: parse(&rec[2], "steps", line)?,
            mvpa_minutes: mvpa,
            synced,
        });
    }
    Ok(out)
}

pub fn write_behavior<W: Write>(mut w: W, records: impl IntoIterator<Item = BehaviorRecord>) -> std::io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.participant,
            r.day.format("%Y-%m-%d"),
            r.steps,
            r.mvpa_minutes,
            u8::from(r.synced)
        )?;
    }
    Ok(())
}

/// Reads `participant, age, sex, os, tracker, programs, bmi` records;
/// programs are comma-joined and a BMI of `-` means unknown.
pub fn read_profiles<R: Read>(r: R) -> Result<Vec<ParticipantProfile>, IngestError> {
    let mut out = Vec::new();
    for rec in tsv_reader(r).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 7 {
            return Err(IngestError::Parse {
                line,
                message: format!("expected 7 fields, found {}", rec.len()),
            });
        }
        let programs = rec[5]
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| parse::<Program>(s, "program", line))
            .collect::<Result<BTreeSet<_>, _>>()?;
        if programs.is_empty() {
            return Err(IngestError::Parse {
                line,
                message: "participant must be enrolled in at least one program".into(),
            });
        }
        let bmi = match &rec[6] {
            "-" | "" => None,
            s => Some(parse::<f64>(s, "bmi", line)?),
        };
        out.push(ParticipantProfile {
            participant: rec[0].to_string(),
            age_years: parse(&rec[1], "age", line)?,
            sex: parse(&rec[2], "sex", line)?,
            os: parse(&rec[3], "os", line)?,
            tracker: parse(&rec[4], "tracker", line)?,
            enrolled_programs: programs,
            bmi,
        });
    }
    Ok(out)
}

pub fn write_profiles<'a, W: Write>(
    mut w: W,
    profiles: impl IntoIterator<Item = &'a ParticipantProfile>,
) -> std::io::Result<()> {
    for p in profiles {
        let programs: Vec<&str> = p.enrolled_programs.iter().map(|p| p.as_str()).collect();
        let bmi = p.bmi.map_or("-".to_string(), |b| b.to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.participant,
            p.age_years,
            p.sex,
            p.os,
            p.tracker,
            programs.join(","),
            bmi
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(d: u32) -> Day {
        Day::from_ymd_opt(2023, 4, d).unwrap()
    }

    #[test]
    fn behavior_round_trip() {
        let recs = vec![
            BehaviorRecord { participant: "p1".into(), day: day(1), steps: 3000, mvpa_minutes: 12.5, synced: true },
            BehaviorRecord { participant: "p1".into(), day: day(2), steps: 0, mvpa_minutes: 0.0, synced: false },
        ];
        let mut buf = Vec::new();
        write_behavior(&mut buf, recs.clone()).unwrap();
        assert_eq!(read_behavior(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn profile_round_trip_and_errors() {
        let text = "# comment\np1\t47\tF\tiOS\tFitbit\tNSC,EDSH\t23.1\np2\t30\tM\tAndroid\tOther\tNSC\t-\n";
        let ps = read_profiles(text.as_bytes()).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[1].bmi, None);
        let mut buf = Vec::new();
        write_profiles(&mut buf, &ps).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text.lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());

        let bad = "p1\t47\tX\tiOS\tFitbit\tNSC\t-\n";
        assert!(matches!(read_profiles(bad.as_bytes()), Err(IngestError::Parse { line: 1, .. })));
        let no_program = "p1\t47\tF\tiOS\tFitbit\t\t-\n";
        assert!(read_profiles(no_program.as_bytes()).is_err());
    }

    #[test]
    fn duplicate_day_conflict() {
        let mut h = BehaviorHistory::new();
        let r = BehaviorRecord { participant: "p".into(), day: day(1), steps: 10, mvpa_minutes: 1.0, synced: true };
        h.insert(r.clone()).unwrap();
        h.insert(r.clone()).unwrap();
        let mut r2 = r;
        r2.steps = 11;
        assert!(matches!(h.insert(r2), Err(IngestError::DuplicateRecord { .. })));
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn window_zero_fills_unsynced() {
        let mut h = BehaviorHistory::new();
        h.insert(BehaviorRecord { participant: "p".into(), day: day(3), steps: 4000, mvpa_minutes: 5.0, synced: true }).unwrap();
        h.insert(BehaviorRecord { participant: "p".into(), day: day(5), steps: 3000, mvpa_minutes: 0.0, synced: true }).unwrap();
        h.insert(BehaviorRecord { participant: "p".into(), day: day(6), steps: 9999, mvpa_minutes: 9.0, synced: false }).unwrap();
        let w = window_stats(h.participant("p"), day(8), 7);
        assert_eq!(w.synced_days, 2);
        assert_eq!(w.steps_mean(), 1000.0);
        assert_eq!(w.steps_max, 4000.0);
        assert_eq!(w.mvpa_sum, 5.0);
    }
}
