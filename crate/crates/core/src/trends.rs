//! Monthly trend series, external epidemic overlays and the cross-method
//! correlation check.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CleanPost, Month};
use crate::lexicon::LexiconAnnotation;
use crate::topicmodel::{group_mass, TopicGroupMap};

#[derive(Debug, Error)]
pub enum TrendError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least two points, got {0}")]
    TooShort(usize),
    #[error("correlation undefined: a series has zero variance")]
    ZeroVariance,
    #[error("{0}")]
    Misaligned(String),
    #[error("external CSV is missing required column {0:?}")]
    MissingColumn(String),
    #[error("unknown series column {0:?}")]
    UnknownColumn(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = TrendError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendSource {
    LdaMass,
    LexiconCount,
}

/// Month-by-column values over a contiguous month range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub source: TrendSource,
    pub months: Vec<Month>,
    pub columns: Vec<String>,
    /// One row per month, one value per column.
    pub values: Vec<Vec<f64>>,
    pub normalized: bool,
}

impl TrendSeries {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|row| row[c]).collect())
    }

    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }

    /// Rows restricted to the given months, in that order. Missing months
    /// yield `None`.
    fn rows_for(&self, months: &[Month]) -> Vec<Option<&Vec<f64>>> {
        let index: HashMap<Month, usize> = self.months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        months.iter().map(|m| index.get(m).map(|&i| &self.values[i])).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("month").chain(self.columns.iter().map(String::as_str)))
            .expect("write to Vec");
        for (m, row) in self.months.iter().zip(&self.values) {
            let rec: Vec<String> = std::iter::once(m.to_string())
                .chain(row.iter().map(|v| v.to_string()))
                .collect();
            w.write_record(&rec).expect("write to Vec");
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("utf-8")
    }
}

fn month_span<'a>(posts: impl Iterator<Item = &'a CleanPost>) -> Vec<Month> {
    let (mut lo, mut hi): (Option<Month>, Option<Month>) = (None, None);
    for p in posts {
        lo = Some(lo.map_or(p.month, |m| m.min(p.month)));
        hi = Some(hi.map_or(p.month, |m| m.max(p.month)));
    }
    match (lo, hi) {
        (Some(a), Some(b)) => Month::range_inclusive(a, b),
        _ => Vec::new(),
    }
}

/// Sum of each post's group mass per month. Row `i` of `theta` belongs to
/// `posts[i]`; summation follows post order within a month.
pub fn lda_monthly_sum(posts: &[CleanPost], theta: &Array2<f64>, map: &TopicGroupMap) -> Result<TrendSeries> {
    if theta.nrows() != posts.len() {
        return Err(TrendError::LengthMismatch(posts.len(), theta.nrows()));
    }
    if theta.ncols() != map.assignment.len() {
        return Err(TrendError::Misaligned(format!(
            "theta has {} topics, group map covers {}",
            theta.ncols(),
            map.assignment.len()
        )));
    }
    let months = month_span(posts.iter());
    let index: HashMap<Month, usize> = months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut values = vec![vec![0.0; map.groups.len()]; months.len()];
    for (post, row) in posts.iter().zip(theta.rows()) {
        let mass = group_mass(row.as_slice().expect("standard layout"), map);
        for (acc, v) in values[index[&post.month]].iter_mut().zip(mass) {
            *acc += v;
        }
    }
    Ok(TrendSeries {
        source: TrendSource::LdaMass,
        months,
        columns: map.groups.clone(),
        values,
        normalized: false,
    })
}

/// Number of posts per month whose annotation contains each label.
pub fn lexicon_monthly_count(
    posts: &[CleanPost],
    annotations: &[LexiconAnnotation],
    labels: &[String],
) -> Result<TrendSeries> {
    if annotations.len() != posts.len() {
        return Err(TrendError::LengthMismatch(posts.len(), annotations.len()));
    }
    if let Some((p, a)) = posts.iter().zip(annotations).find(|(p, a)| p.id != a.post_id) {
        return Err(TrendError::Misaligned(format!(
            "annotation for {} paired with post {}",
            a.post_id, p.id
        )));
    }
    let months = month_span(posts.iter());
    let index: HashMap<Month, usize> = months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut values = vec![vec![0.0; labels.len()]; months.len()];
    for (post, ann) in posts.iter().zip(annotations) {
        let row = &mut values[index[&post.month]];
        for (c, label) in labels.iter().enumerate() {
            if ann.topics.contains(label) {
                row[c] += 1.0;
            }
        }
    }
    Ok(TrendSeries {
        source: TrendSource::LexiconCount,
        months,
        columns: labels.to_vec(),
        values,
        normalized: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub series: TrendSeries,
    /// Months with no activity, left as zero rows.
    pub empty_months: Vec<Month>,
}

/// Divides each month's row by its sum.
pub fn monthly_proportions(series: &TrendSeries) -> Proportions {
    let mut out = series.clone();
    let mut empty_months = Vec::new();
    for (m, row) in out.months.iter().zip(out.values.iter_mut()) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            empty_months.push(*m);
        }
    }
    out.normalized = true;
    Proportions {
        series: out,
        empty_months,
    }
}

pub const DEFAULT_LOCATIONS: [&str; 3] = ["United States", "United Kingdom", "Canada"];

/// Monthly epidemic figures summed over the selected locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSeries {
    pub locations: Vec<String>,
    pub months: Vec<Month>,
    pub total_cases: Vec<f64>,
    pub new_cases: Vec<f64>,
    pub people_vaccinated: Vec<f64>,
    /// Months filled by carrying values forward during alignment.
    #[serde(default)]
    pub filled_months: Vec<Month>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ExternalSeries {
    pub fn empty(locations: &[String]) -> Self {
        ExternalSeries {
            locations: locations.to_vec(),
            months: Vec::new(),
            total_cases: Vec::new(),
            new_cases: Vec::new(),
            people_vaccinated: Vec::new(),
            filled_months: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("month,total_cases,new_cases,people_vaccinated\n");
        for i in 0..self.months.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.months[i], self.total_cases[i], self.new_cases[i], self.people_vaccinated[i]
            ));
        }
        out
    }

    fn check_monotone(&mut self) {
        for i in 1..self.total_cases.len() {
            if self.total_cases[i] < self.total_cases[i - 1] {
                self.warnings.push(format!(
                    "total_cases decreases from {} to {} in {}",
                    self.total_cases[i - 1],
                    self.total_cases[i],
                    self.months[i]
                ));
            }
        }
    }
}

#[derive(Default)]
struct LocationMonth {
    total: Option<(NaiveDate, f64)>,
    vaccinated: Option<(NaiveDate, f64)>,
    new_cases: f64,
}

fn keep_latest(slot: &mut Option<(NaiveDate, f64)>, date: NaiveDate, value: Option<f64>) {
    if let Some(v) = value {
        if slot.is_none_or(|(d, _)| date >= d) {
            *slot = Some((date, v));
        }
    }
}

pub fn load_external_csv(path: impl AsRef<Path>, locations: &[String]) -> Result<ExternalSeries> {
    read_external_csv(fs::File::open(path)?, locations)
}

/// Reads an OWID-style daily CSV. Cumulative columns take the last dated
/// observation per location and month (carried forward across gaps);
/// daily new cases are summed. Rows for other locations are ignored.
pub fn read_external_csv<R: Read>(reader: R, locations: &[String]) -> Result<ExternalSeries> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| TrendError::MissingColumn(name.to_string()))
    };
    let (c_date, c_loc, c_total, c_new, c_vacc) = (
        col("date")?,
        col("location")?,
        col("total_cases")?,
        col("new_cases")?,
        col("people_vaccinated")?,
    );
    let number = |s: Option<&str>| s.map(str::trim).filter(|s| !s.is_empty()).and_then(|s| s.parse::<f64>().ok());

    let mut per_location: Vec<BTreeMap<Month, LocationMonth>> = locations.iter().map(|_| BTreeMap::new()).collect();
    let mut bad_dates = 0usize;
    for rec in r.records() {
        let rec = rec?;
        let Some(li) = locations.iter().position(|l| Some(l.as_str()) == rec.get(c_loc).map(str::trim)) else {
            continue;
        };
        let Some(date) = rec
            .get(c_date)
            .and_then(|d| NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").ok())
        else {
            bad_dates += 1;
            continue;
        };
        let month = Month::of(&date.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
        let slot = per_location[li].entry(month).or_default();
        keep_latest(&mut slot.total, date, number(rec.get(c_total)));
        keep_latest(&mut slot.vaccinated, date, number(rec.get(c_vacc)));
        slot.new_cases += number(rec.get(c_new)).unwrap_or(0.0);
    }

    let mut series = ExternalSeries::empty(locations);
    if bad_dates > 0 {
        series.warnings.push(format!("skipped {bad_dates} rows with unparseable dates"));
    }
    let first = per_location.iter().filter_map(|m| m.keys().next()).min().copied();
    let last = per_location.iter().filter_map(|m| m.keys().next_back()).max().copied();
    let (Some(first), Some(last)) = (first, last) else {
        return Ok(series);
    };
    let mut carried_total = vec![0.0; locations.len()];
    let mut carried_vacc = vec![0.0; locations.len()];
    for month in Month::range_inclusive(first, last) {
        let (mut total, mut new, mut vacc) = (0.0, 0.0, 0.0);
        for (li, months) in per_location.iter().enumerate() {
            if let Some(slot) = months.get(&month) {
                if let Some((_, v)) = slot.total {
                    carried_total[li] = v;
                }
                if let Some((_, v)) = slot.vaccinated {
                    carried_vacc[li] = v;
                }
                new += slot.new_cases;
            }
            total += carried_total[li];
            vacc += carried_vacc[li];
        }
        series.months.push(month);
        series.total_cases.push(total);
        series.new_cases.push(new);
        series.people_vaccinated.push(vacc);
    }
    series.check_monotone();
    Ok(series)
}

/// Restricts the series to `months`. Months the source lacks are filled by
/// carrying cumulative columns forward (zero before the first observation)
/// with zero new cases, and recorded in `filled_months`.
pub fn align_external(ext: &ExternalSeries, months: &[Month]) -> ExternalSeries {
    let index: HashMap<Month, usize> = ext.months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut out = ExternalSeries::empty(&ext.locations);
    out.warnings = ext.warnings.clone();
    for &m in months {
        out.months.push(m);
        if let Some(&i) = index.get(&m) {
            out.total_cases.push(ext.total_cases[i]);
            out.new_cases.push(ext.new_cases[i]);
            out.people_vaccinated.push(ext.people_vaccinated[i]);
        } else {
            let prev = ext.months.iter().rposition(|x| *x < m);
            out.total_cases.push(prev.map_or(0.0, |i| ext.total_cases[i]));
            out.people_vaccinated.push(prev.map_or(0.0, |i| ext.people_vaccinated[i]));
            out.new_cases.push(0.0);
            out.filled_months.push(m);
        }
    }
    out
}

/// Pearson product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TrendError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(TrendError::TooShort(a.len()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(TrendError::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub lda_group: String,
    pub lexicon_topic: String,
    pub months: usize,
    pub r: Option<f64>,
    pub error: Option<String>,
}

/// The two pairs checked by default: fear against fear, and uncertainty
/// about the pandemic against the pandemic-development lexicon.
pub fn default_pairs() -> Vec<(String, String)> {
    vec![
        ("Fear of coronavirus".into(), "Fear of coronavirus".into()),
        ("Uncertainty on development of pandemic".into(), "Pandemic Development".into()),
    ]
}

/// Pearson r per `(LDA group, lexicon topic)` pair over the months both
/// series cover. A failing pair reports its error without stopping others.
pub fn compare_methods(lda: &TrendSeries, lexicon: &TrendSeries, pairs: &[(String, String)]) -> Vec<PairCorrelation> {
    let shared: Vec<Month> = lda.months.iter().filter(|m| lexicon.months.contains(m)).copied().collect();
    let lda_rows = lda.rows_for(&shared);
    let lex_rows = lexicon.rows_for(&shared);
    pairs
        .iter()
        .map(|(group, topic)| {
            let outcome = (|| {
                let gc = lda.columns.iter().position(|c| c == group).ok_or_else(|| TrendError::UnknownColumn(group.clone()))?;
                let tc = lexicon.columns.iter().position(|c| c == topic).ok_or_else(|| TrendError::UnknownColumn(topic.clone()))?;
                let a: Vec<f64> = lda_rows.iter().map(|r| r.expect("shared month")[gc]).collect();
                let b: Vec<f64> = lex_rows.iter().map(|r| r.expect("shared month")[tc]).collect();
                pearson(&a, &b)
            })();
            PairCorrelation {
                lda_group: group.clone(),
                lexicon_topic: topic.clone(),
                months: shared.len(),
                r: outcome.as_ref().ok().copied(),
                error: outcome.err().map(|e| e.to_string()),
            }
        })
        .collect()
}

pub const DASHBOARD_SCHEMA_VERSION: u32 = 1;

/// Everything the dashboard renders, as written to `dashboard.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dashboard {
    pub schema_version: u32,
    pub months: Vec<Month>,
    pub groups: Vec<String>,
    pub lexicon_topics: Vec<String>,
    pub lda: TrendSeries,
    pub lexicon: TrendSeries,
    pub lda_proportions: TrendSeries,
    pub lexicon_proportions: TrendSeries,
    pub empty_months: Vec<Month>,
    pub external: ExternalSeries,
    pub correlations: Vec<PairCorrelation>,
    /// Whether correlations were computed on proportions rather than sums.
    pub correlation_on_proportions: bool,
}

impl Dashboard {
    pub fn build(
        lda: TrendSeries,
        lexicon: TrendSeries,
        external: &ExternalSeries,
        pairs: &[(String, String)],
        correlation_on_proportions: bool,
    ) -> Self {
        let lda_prop = monthly_proportions(&lda);
        let lex_prop = monthly_proportions(&lexicon);
        let correlations = if correlation_on_proportions {
            compare_methods(&lda_prop.series, &lex_prop.series, pairs)
        } else {
            compare_methods(&lda, &lexicon, pairs)
        };
        Dashboard {
            schema_version: DASHBOARD_SCHEMA_VERSION,
            months: lda.months.clone(),
            groups: lda.columns.clone(),
            lexicon_topics: lexicon.columns.clone(),
            external: align_external(external, &lda.months),
            empty_months: lda_prop.empty_months,
            lda_proportions: lda_prop.series,
            lexicon_proportions: lex_prop.series,
            lda,
            lexicon,
            correlations,
            correlation_on_proportions,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub const DASHBOARD_FILES: [&str; 5] = [
    "trends_lda.csv",
    "trends_lexicon.csv",
    "proportions.csv",
    "external.csv",
    "dashboard.json",
];

/// Writes the CSV exports and `dashboard.json` into `dir`.
pub fn export_dashboard(dashboard: &Dashboard, dir: &Path) -> Result<Vec<PathBuf>> {
    let write_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| TrendError::Write { path, source }
    };
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    let contents = [
        dashboard.lda.to_csv(),
        dashboard.lexicon.to_csv(),
        dashboard.lda_proportions.to_csv(),
        dashboard.external.to_csv(),
        dashboard.to_json()?,
    ];
    let mut written = Vec::new();
    for (name, body) in DASHBOARD_FILES.iter().zip(contents) {
        let path = dir.join(name);
        fs::write(&path, body).map_err(write_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
