//! Death-count records: parsing, cause classification across ICD revisions,
//! and assembly of per-country compositions of deaths at ages 40-64.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compdata::{closure, clr, clr_inv_coords, FunctionalComposition, TimeGrid};
use crate::error::{Error, Result};
use crate::smoothing::MissingMask;

const DEFAULT_CAUSE_MAP: &str = include_str!("../data/cause_map.csv");
const DEFAULT_ADJUSTMENTS: &str = include_str!("../data/adjustments.csv");

/// Oldest age assumed for an open-ended band such as `85+`.
pub const OPEN_BAND_END: u32 = 99;

/// Country labels of the default sample.
pub const DEFAULT_COUNTRIES: [&str; 22] = [
    "AUS", "AUT", "BEL", "CAN", "DNK", "FIN", "FRA", "GRE", "HUN", "ICE", "IRL", "ITA", "JPN", "NL", "NZL",
    "NOR", "POL", "SPA", "SWE", "SWI", "UK", "USA",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    pub const BOTH: [Sex; 2] = [Sex::Male, Sex::Female];

    /// Sample label used for output directories.
    pub fn sample_label(self) -> &'static str {
        match self {
            Sex::Male => "men",
            Sex::Female => "women",
        }
    }

    fn parse_code(raw: &str) -> Option<Sex> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "1" | "m" | "male" | "men" => Some(Sex::Male),
            "2" | "f" | "female" | "women" => Some(Sex::Female),
            _ => None,
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IcdRevision(u8);

impl IcdRevision {
    pub fn new(revision: u8) -> Result<Self> {
        if (7..=10).contains(&revision) {
            Ok(Self(revision))
        } else {
            Err(Error::UnknownRevision(revision.to_string()))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CauseClass {
    Inf,
    End,
    Circ,
    Neop,
    Lung,
    Resp,
    Dig,
    Ext,
}

impl CauseClass {
    pub const ALL: [CauseClass; 8] = [
        CauseClass::Inf,
        CauseClass::End,
        CauseClass::Circ,
        CauseClass::Neop,
        CauseClass::Lung,
        CauseClass::Resp,
        CauseClass::Dig,
        CauseClass::Ext,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CauseClass::Inf => "INF",
            CauseClass::End => "END",
            CauseClass::Circ => "CIRC",
            CauseClass::Neop => "NEOP",
            CauseClass::Lung => "LUNG",
            CauseClass::Resp => "RESP",
            CauseClass::Dig => "DIG",
            CauseClass::Ext => "EXT",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn part_names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.label().to_string()).collect()
    }
}

/// Outcome of classifying one cause code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Classification {
    Class(CauseClass),
    Excluded,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Class(c) => f.write_str(c.label()),
            Classification::Excluded => f.write_str("EXCLUDED"),
        }
    }
}

impl FromStr for Classification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_uppercase();
        if s == "EXCLUDED" {
            return Ok(Classification::Excluded);
        }
        CauseClass::ALL
            .iter()
            .find(|c| c.label() == s)
            .map(|&c| Classification::Class(c))
            .ok_or_else(|| Error::InvalidCauseMap(format!("unknown class `{s}`")))
    }
}

/// Uppercases and strips separators, e.g. `c34.1` -> `C341`.
pub fn normalize_code(code: &str) -> String {
    code.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_uppercase()).collect()
}

/// A code prefix or an inclusive range of equal-length prefixes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodePattern {
    lo: String,
    hi: String,
}

impl CodePattern {
    pub fn parse(raw: &str) -> Result<Self> {
        let (lo, hi) = match raw.split_once('-') {
            Some((lo, hi)) => (normalize_code(lo), normalize_code(hi)),
            None => (normalize_code(raw), normalize_code(raw)),
        };
        if lo.is_empty() || lo.len() != hi.len() || shape(&lo) != shape(&hi) || lo > hi {
            return Err(Error::InvalidCauseMap(format!("bad code pattern `{raw}`")));
        }
        Ok(Self { lo, hi })
    }

    pub fn matches(&self, code: &str) -> bool {
        if code.len() < self.lo.len() {
            return false;
        }
        let prefix = &code[..self.lo.len()];
        shape(prefix) == shape(&self.lo) && self.lo.as_str() <= prefix && prefix <= self.hi.as_str()
    }
}

impl fmt::Display for CodePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            f.write_str(&self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

fn shape(s: &str) -> Vec<bool> {
    s.bytes().map(|b| b.is_ascii_digit()).collect()
}

#[derive(Debug, Clone)]
struct CauseEntry {
    revision: u8,
    pattern: CodePattern,
    class: Classification,
    priority: i32,
}

/// Per-revision code patterns mapped to cause classes.
#[derive(Debug, Clone)]
pub struct CauseMap {
    entries: Vec<CauseEntry>,
}

#[derive(Deserialize)]
struct CauseRow {
    revision: String,
    pattern: String,
    class: String,
    priority: Option<i32>,
}

impl CauseMap {
    /// Cause classes of the eight-part analysis for ICD-7 to ICD-10.
    pub fn builtin() -> Self {
        Self::from_reader(DEFAULT_CAUSE_MAP.as_bytes()).expect("bundled cause map is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = commented_csv(reader);
        let mut entries = Vec::new();
        for row in rdr.deserialize::<CauseRow>() {
            let row = row.map_err(|e| Error::InvalidCauseMap(e.to_string()))?;
            entries.push(CauseEntry {
                revision: parse_map_revision(&row.revision)?,
                pattern: CodePattern::parse(&row.pattern)?,
                class: row.class.parse()?,
                priority: row.priority.unwrap_or(1),
            });
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest-priority match; unmatched codes are excluded.
    pub fn classify(&self, revision: IcdRevision, code: &str) -> Result<Classification> {
        let code = normalize_code(code);
        let mut best: Option<&CauseEntry> = None;
        let mut tie: Option<&CauseEntry> = None;
        for e in self.entries.iter().filter(|e| e.revision == revision.0 && e.pattern.matches(&code)) {
            match best {
                None => best = Some(e),
                Some(b) if e.priority > b.priority => {
                    best = Some(e);
                    tie = None;
                }
                Some(b) if e.priority == b.priority && e.class != b.class => tie = Some(e),
                _ => {}
            }
        }
        if let (Some(b), Some(t)) = (best, tie) {
            return Err(Error::AmbiguousCode {
                code,
                revision: revision.0,
                first: format!("{} ({})", b.class, b.pattern),
                second: format!("{} ({})", t.class, t.pattern),
            });
        }
        Ok(best.map_or(Classification::Excluded, |e| e.class))
    }
}

fn parse_map_revision(raw: &str) -> Result<u8> {
    raw.trim()
        .parse::<u8>()
        .ok()
        .filter(|r| (7..=10).contains(r))
        .ok_or_else(|| Error::InvalidCauseMap(format!("revision `{raw}` is not 7, 8, 9 or 10")))
}

fn commented_csv(reader: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).flexible(false).from_reader(reader)
}

/// Override of the cause map for a country (or every country) and revision.
#[derive(Debug, Clone)]
pub struct AdjustmentRule {
    pub country: Option<String>,
    pub revision: u8,
    pub pattern: CodePattern,
    pub class: Classification,
}

impl AdjustmentRule {
    pub fn matches(&self, country: &str, revision: IcdRevision, code: &str) -> bool {
        self.revision == revision.0
            && self.country.as_deref().is_none_or(|c| c == country)
            && self.pattern.matches(&normalize_code(code))
    }
}

#[derive(Deserialize)]
struct AdjustmentRow {
    country: String,
    revision: String,
    pattern: String,
    class: String,
}

/// The HIV and Austrian diabetes reclassifications.
pub fn builtin_adjustments() -> Vec<AdjustmentRule> {
    read_adjustments(DEFAULT_ADJUSTMENTS.as_bytes()).expect("bundled adjustments are valid")
}

pub fn read_adjustments(reader: impl Read) -> Result<Vec<AdjustmentRule>> {
    let mut rdr = commented_csv(reader);
    let mut rules = Vec::new();
    for row in rdr.deserialize::<AdjustmentRow>() {
        let row = row.map_err(|e| Error::InvalidCauseMap(e.to_string()))?;
        rules.push(AdjustmentRule {
            country: (row.country != "*").then_some(row.country),
            revision: parse_map_revision(&row.revision)?,
            pattern: CodePattern::parse(&row.pattern)?,
            class: row.class.parse()?,
        });
    }
    Ok(rules)
}

pub fn adjustments_from_path(path: &Path) -> Result<Vec<AdjustmentRule>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_adjustments(file)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeathRecord {
    pub country: String,
    pub year: i32,
    pub sex: Sex,
    pub revision: IcdRevision,
    pub cause_code: String,
    /// `from-to`, or `from+` for an open-ended band.
    pub age_group: String,
    pub age_from: u32,
    pub age_to: Option<u32>,
    pub deaths: u64,
}

pub fn classify(
    record: &DeathRecord,
    map: &CauseMap,
    adjustments: &[AdjustmentRule],
) -> Result<Classification> {
    if let Some(rule) =
        adjustments.iter().find(|r| r.matches(&record.country, record.revision, &record.cause_code))
    {
        return Ok(rule.class);
    }
    map.classify(record.revision, &record.cause_code)
}

/// Column names of the record file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub country: String,
    pub year: String,
    pub sex: String,
    pub revision: String,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeBand {
    pub column: String,
    pub from: u32,
    /// Inclusive; absent for an open-ended band.
    pub to: Option<u32>,
}

impl AgeBand {
    pub fn label(&self) -> String {
        match self.to {
            Some(to) => format!("{}-{to}", self.from),
            None => format!("{}+", self.from),
        }
    }
}

/// Layout of a record file: column names, age bands, and optional code tables
/// for revisions and countries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatConfig {
    pub columns: ColumnMap,
    pub age_bands: Vec<AgeBand>,
    /// Raw list code to ICD revision; otherwise the leading two digits are used.
    #[serde(default)]
    pub revisions: BTreeMap<String, u8>,
    /// Raw country code to label; unmapped codes are kept as they are.
    #[serde(default)]
    pub countries: BTreeMap<String, String>,
}

impl FormatConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.age_bands.is_empty() {
            return Err(Error::Config("format declares no age bands".into()));
        }
        for b in &self.age_bands {
            if b.to.is_some_and(|to| to < b.from) {
                return Err(Error::Config(format!("age band `{}` ends before it starts", b.column)));
            }
        }
        for (code, &rev) in &self.revisions {
            IcdRevision::new(rev)
                .map_err(|_| Error::Config(format!("revision code `{code}` maps to {rev}")))?;
        }
        Ok(())
    }

    pub fn revision(&self, raw: &str) -> Result<IcdRevision> {
        let raw = raw.trim();
        if let Some(&r) = self.revisions.get(raw) {
            return IcdRevision::new(r);
        }
        raw.get(..2)
            .and_then(|p| p.parse::<u8>().ok())
            .and_then(|r| IcdRevision::new(r).ok())
            .ok_or_else(|| Error::UnknownRevision(raw.to_string()))
    }

    fn country(&self, raw: &str) -> String {
        let raw = raw.trim();
        self.countries.get(raw).cloned().unwrap_or_else(|| raw.to_string())
    }
}

/// A row that could not be turned into records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// 1-based line in the input file.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutput {
    pub records: Vec<DeathRecord>,
    pub rejects: Vec<Reject>,
}

/// One record per row and age band; rows with unreadable cells are rejected
/// whole. Empty death cells count as zero.
pub fn parse_records(input: impl Read, format: &FormatConfig) -> Result<ParseOutput> {
    format.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::HeaderMismatch(name.to_string()))
    };
    let c = &format.columns;
    let (i_country, i_year, i_sex, i_rev, i_cause) =
        (col(&c.country)?, col(&c.year)?, col(&c.sex)?, col(&c.revision)?, col(&c.cause)?);
    let bands: Vec<(usize, &AgeBand)> =
        format.age_bands.iter().map(|b| col(&b.column).map(|i| (i, b))).collect::<Result<_>>()?;

    let mut out = ParseOutput::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |i: usize| row.get(i).unwrap_or("");
        let reject = |reason: String| Reject { line, reason };

        let year = match cell(i_year).parse::<i32>() {
            Ok(y) => y,
            Err(_) => {
                out.rejects.push(reject(format!("year `{}` is not an integer", cell(i_year))));
                continue;
            }
        };
        let Some(sex) = Sex::parse_code(cell(i_sex)) else {
            out.rejects.push(reject(format!("sex `{}` is neither male nor female", cell(i_sex))));
            continue;
        };
        let revision = format.revision(cell(i_rev))?;
        let code = normalize_code(cell(i_cause));
        if code.is_empty() {
            out.rejects.push(reject("empty cause code".into()));
            continue;
        }
        let mut deaths = Vec::with_capacity(bands.len());
        for &(i, band) in &bands {
            let raw = cell(i);
            match if raw.is_empty() { Ok(0) } else { raw.parse::<u64>() } {
                Ok(d) => deaths.push(d),
                Err(_) => {
                    deaths.clear();
                    out.rejects.push(reject(format!("{} deaths `{raw}` is not a count", band.column)));
                    break;
                }
            }
        }
        if deaths.len() != bands.len() {
            continue;
        }
        let country = format.country(cell(i_country));
        for (&(_, band), d) in bands.iter().zip(deaths) {
            out.records.push(DeathRecord {
                country: country.clone(),
                year,
                sex,
                revision,
                cause_code: code.clone(),
                age_group: band.label(),
                age_from: band.from,
                age_to: band.to,
                deaths: d,
            });
        }
    }
    Ok(out)
}

pub fn parse_records_path(path: &Path, format: &FormatConfig) -> Result<ParseOutput> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(file, format).map_err(|e| match e {
        Error::Csv(err) => Error::malformed(path, err.to_string()),
        other => other,
    })
}

/// Ages counted in the analysis, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeWindow {
    pub from: u32,
    pub to: u32,
}

impl Default for AgeWindow {
    fn default() -> Self {
        Self { from: 40, to: 64 }
    }
}

impl AgeWindow {
    /// Share of the band's single years inside the window.
    pub fn coverage(&self, from: u32, to: Option<u32>) -> f64 {
        let to = to.unwrap_or(OPEN_BAND_END).max(from);
        let lo = from.max(self.from);
        let hi = to.min(self.to);
        if hi < lo {
            return 0.0;
        }
        f64::from(hi - lo + 1) / f64::from(to - from + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub first_year: i32,
    pub last_year: i32,
    pub age_window: AgeWindow,
    pub pseudocount: f64,
    /// Country labels to keep, in any order; `None` keeps all.
    pub countries: Option<Vec<String>>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            first_year: 1959,
            last_year: 2015,
            age_window: AgeWindow::default(),
            pseudocount: crate::compdata::DEFAULT_PSEUDOCOUNT,
            countries: Some(DEFAULT_COUNTRIES.iter().map(|s| s.to_string()).collect()),
        }
    }
}

/// Per (country, sex, year): every input death is either classified or excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConservationRow {
    pub country: String,
    pub sex: Sex,
    pub year: i32,
    pub input: u64,
    pub classified: u64,
    pub excluded: u64,
}

impl ConservationRow {
    pub fn balanced(&self) -> bool {
        self.classified + self.excluded == self.input
    }
}

/// Raw compositions and missing-year masks of one sex, sorted by country.
#[derive(Debug, Clone, Default)]
pub struct SexSample {
    pub compositions: Vec<FunctionalComposition>,
    pub masks: Vec<MissingMask>,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutput {
    pub samples: BTreeMap<Sex, SexSample>,
    pub conservation: Vec<ConservationRow>,
    pub warnings: Vec<String>,
}

type Key = (String, Sex, i32);
type BandCounts = BTreeMap<(CauseClass, u32, Option<u32>), u64>;

/// Sums window-weighted deaths per class and year and closes each year.
///
/// Years without any death in the window are flagged in the mask and filled
/// with a placeholder interpolated linearly in clr space between the nearest
/// observed years.
pub fn build_compositions(
    records: &[DeathRecord],
    map: &CauseMap,
    adjustments: &[AdjustmentRule],
    options: &BuildOptions,
) -> Result<BuildOutput> {
    if options.first_year > options.last_year {
        return Err(Error::Config(format!(
            "year window {}-{} is empty",
            options.first_year, options.last_year
        )));
    }
    if options.age_window.from > options.age_window.to {
        return Err(Error::Config("age window is empty".into()));
    }
    if !(options.pseudocount > 0.0 && options.pseudocount.is_finite()) {
        return Err(Error::Config(format!("pseudocount must be positive, got {}", options.pseudocount)));
    }
    let wanted: Option<BTreeSet<&str>> =
        options.countries.as_ref().map(|c| c.iter().map(String::as_str).collect());
    let in_scope = |r: &DeathRecord| {
        (options.first_year..=options.last_year).contains(&r.year)
            && wanted.as_ref().is_none_or(|w| w.contains(r.country.as_str()))
    };

    let mut out = BuildOutput::default();
    let mut balance: BTreeMap<Key, (u64, u64, u64)> = BTreeMap::new();
    // deaths per key, class and age band, summed in a fixed order afterwards
    let mut counts: BTreeMap<Key, BandCounts> = BTreeMap::new();
    let mut cache: BTreeMap<(String, IcdRevision, String), Classification> = BTreeMap::new();
    let mut straddling: BTreeSet<String> = BTreeSet::new();

    for r in records.iter().filter(|r| in_scope(r)) {
        let cache_key = (r.country.clone(), r.revision, r.cause_code.clone());
        let class = match cache.get(&cache_key) {
            Some(&c) => c,
            None => {
                let c = classify(r, map, adjustments)?;
                cache.insert(cache_key, c);
                c
            }
        };
        let key = (r.country.clone(), r.sex, r.year);
        let b = balance.entry(key.clone()).or_default();
        b.0 += r.deaths;
        let Classification::Class(class) = class else {
            b.2 += r.deaths;
            continue;
        };
        b.1 += r.deaths;
        let cov = options.age_window.coverage(r.age_from, r.age_to);
        if cov > 0.0 && cov < 1.0 {
            straddling.insert(r.age_group.clone());
        }
        *counts.entry(key).or_default().entry((class, r.age_from, r.age_to)).or_default() += r.deaths;
    }
    out.conservation = balance
        .into_iter()
        .map(|((country, sex, year), (input, classified, excluded))| ConservationRow {
            country,
            sex,
            year,
            input,
            classified,
            excluded,
        })
        .collect();
    for band in &straddling {
        let open = band.ends_with('+');
        out.warnings.push(format!(
            "PartialAgeCoverage: age band {band} straddles the {}-{} window; deaths allocated pro rata{}",
            options.age_window.from,
            options.age_window.to,
            if open { format!(" assuming the band ends at {OPEN_BAND_END}") } else { String::new() }
        ));
    }

    let years: Vec<i32> = (options.first_year..=options.last_year).collect();
    let grid = TimeGrid::years(options.first_year, options.last_year)?;
    let mut per_curve: BTreeMap<(Sex, String), BTreeMap<i32, [f64; 8]>> = BTreeMap::new();
    for ((country, sex, year), bands) in &counts {
        let mut totals = [0.0; 8];
        for (&(class, from, to), &d) in bands {
            totals[class.index()] += d as f64 * options.age_window.coverage(from, to);
        }
        if totals.iter().sum::<f64>() > 0.0 {
            per_curve.entry((*sex, country.clone())).or_default().insert(*year, totals);
        }
    }
    let seen: BTreeSet<(Sex, String)> = out.conservation.iter().map(|r| (r.sex, r.country.clone())).collect();
    for (sex, country) in &seen {
        if !per_curve.contains_key(&(*sex, country.clone())) {
            out.warnings.push(format!("{country} ({sex}) has no deaths in the age window; dropped"));
        }
    }
    if let Some(w) = &wanted {
        for c in w {
            for sex in Sex::BOTH {
                if !seen.contains(&(sex, c.to_string())) {
                    out.warnings.push(format!("{c} ({sex}) has no records in the year window"));
                }
            }
        }
    }

    for ((sex, country), by_year) in per_curve {
        let missing: Vec<bool> = years.iter().map(|y| !by_year.contains_key(y)).collect();
        let mask = MissingMask { id: country.clone(), missing };
        if mask.check_guard().is_err() {
            return Err(Error::MissingYearBeyondGuard {
                id: format!("{country} ({sex})"),
                missing: mask.n_missing(),
                total: years.len(),
            });
        }
        let observed_years: Vec<i32> = by_year.keys().copied().collect();
        let observed_grid = if observed_years.len() >= 2 {
            TimeGrid::new(observed_years.iter().map(|&y| f64::from(y)).collect())?
        } else {
            grid.clone()
        };
        let raw = DMatrix::from_fn(8, observed_years.len(), |d, j| by_year[&observed_years[j]][d]);
        let observed = if observed_years.len() >= 2 {
            closure(&country, CauseClass::part_names(), observed_grid, &raw, options.pseudocount)?
        } else {
            let col: Vec<f64> = raw.column(0).iter().copied().collect();
            let raw = DMatrix::from_fn(8, grid.len(), |d, _| col[d]);
            closure(&country, CauseClass::part_names(), grid.clone(), &raw, options.pseudocount)?
        };
        let composition = if mask.is_complete() {
            FunctionalComposition::new(
                &country,
                CauseClass::part_names(),
                grid.clone(),
                observed.parts().clone(),
            )?
        } else {
            fill_gaps(&country, &grid, &observed, &observed_years, &mask)?
        };
        if !mask.is_complete() {
            let gaps: Vec<String> =
                years.iter().zip(&mask.missing).filter(|(_, m)| **m).map(|(y, _)| y.to_string()).collect();
            out.warnings.push(format!("{country} ({sex}) is missing {}", gaps.join(", ")));
        }
        let sample = out.samples.entry(sex).or_default();
        sample.compositions.push(composition);
        sample.masks.push(mask);
    }
    Ok(out)
}

/// Linear interpolation in clr space over the missing years, constant beyond
/// the first and last observed year.
fn fill_gaps(
    id: &str,
    grid: &TimeGrid,
    observed: &FunctionalComposition,
    observed_years: &[i32],
    mask: &MissingMask,
) -> Result<FunctionalComposition> {
    let coords = clr(observed);
    let c = coords.coords();
    let xs: Vec<f64> = observed_years.iter().map(|&y| f64::from(y)).collect();
    let mut full = DMatrix::zeros(8, grid.len());
    for (i, &t) in grid.points().iter().enumerate() {
        let col = if observed_years.len() == 1 {
            c.column(0).clone_owned()
        } else {
            let j = xs.partition_point(|&x| x <= t);
            if j == 0 {
                c.column(0).clone_owned()
            } else if j == xs.len() {
                c.column(xs.len() - 1).clone_owned()
            } else if xs[j - 1] == t {
                c.column(j - 1).clone_owned()
            } else {
                let w = (t - xs[j - 1]) / (xs[j] - xs[j - 1]);
                c.column(j - 1) * (1.0 - w) + c.column(j) * w
            }
        };
        full.set_column(i, &col);
    }
    let filled = clr_inv_coords(id, CauseClass::part_names(), grid.clone(), &full)?;
    let mut parts = filled.parts().clone();
    let mut k = 0;
    for (i, &m) in mask.missing.iter().enumerate() {
        if !m {
            parts.set_column(i, &observed.parts().column(k));
            k += 1;
        }
    }
    FunctionalComposition::new(id, CauseClass::part_names(), grid.clone(), parts)
}
