//! Replication harness for RA/ARA scenario grids.
//!
//! Portfolios are the Pareto cases
//!
//! | case | shapes                                                  |
//! |------|---------------------------------------------------------|
//! | HH   | equidistant from 0.6 to 0.4 (all heavy tails)           |
//! | LH   | equidistant from 1.5 to 0.5                             |
//! | LL   | equidistant from 1.6 to 1.4                             |
//! | LH1  | `d - 1` shapes equidistant from 1.6 to 1.4, then 0.5    |
//!
//! Every (cell, replication) pair runs independently with a seed derived from
//! the base seed and the replication index only, so cells share random
//! numbers. Results come back in grid order regardless of scheduling.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{check_alpha, Error, Result};
use crate::margins::{MarginRef, Pareto};
use crate::rearrange::{ara, ra_with, AraConfig, RearrangeConfig, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    HH,
    LH,
    LL,
    LH1,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::HH, CaseId::LH, CaseId::LL, CaseId::LH1];
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::HH => "HH",
            CaseId::LH => "LH",
            CaseId::LL => "LL",
            CaseId::LH1 => "LH1",
        })
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HH" => Ok(CaseId::HH),
            "LH" => Ok(CaseId::LH),
            "LL" => Ok(CaseId::LL),
            "LH1" => Ok(CaseId::LH1),
            _ => Err(Error::domain(format!("unknown case '{s}' (expected HH, LH, LL or LH1)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaseSpec {
    pub case: CaseId,
    pub d: usize,
}

impl CaseSpec {
    pub fn new(case: CaseId, d: usize) -> Self {
        Self { case, d }
    }

    pub fn thetas(&self) -> Result<Vec<f64>> {
        let d = self.d;
        let min_d = if self.case == CaseId::LH1 { 3 } else { 2 };
        if d < min_d {
            return Err(Error::domain(format!("case {} needs d >= {min_d}, got {d}", self.case)));
        }
        Ok(match self.case {
            CaseId::HH => equidistant(0.6, 0.4, d),
            CaseId::LH => equidistant(1.5, 0.5, d),
            CaseId::LL => equidistant(1.6, 1.4, d),
            CaseId::LH1 => {
                let mut t = equidistant(1.6, 1.4, d - 1);
                t.push(0.5);
                t
            }
        })
    }
}

/// `n` equally spaced points from `a` to `b`, both included.
fn equidistant(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Pareto margins for a case.
pub fn case_margins(spec: &CaseSpec) -> Result<Vec<MarginRef>> {
    spec.thetas()?
        .into_iter()
        .map(|t| Pareto::new(t).map(Pareto::into_ref))
        .collect()
}

/// SplitMix64 finaliser; decorrelates consecutive replication indices.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep`; the same in every cell.
pub fn replication_seed(base_seed: u64, rep: usize) -> u64 {
    splitmix64(base_seed.wrapping_add(rep as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyId {
    /// Fixed `d`, varying `N`.
    One,
    /// Fixed `N`, varying `d`.
    Two,
}

/// RA replication study over a grid of `N` and `d` values.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub study: StudyId,
    pub cases: Vec<CaseId>,
    pub n_grid: Vec<usize>,
    pub d_grid: Vec<usize>,
    pub alpha: f64,
    pub eps_abs: f64,
    pub replications: usize,
    pub base_seed: u64,
    /// Column-step cap per run as a multiple of `d`. Deliberately well above
    /// the usual `10 d` so that the step count is observed, not imposed.
    pub cap_factor: usize,
    pub jobs: Option<usize>,
}

impl StudySpec {
    /// Study 1 at desk scale: `d = 20`, `N = 2^7..2^12`, 10 replications.
    pub fn study1_desk() -> Self {
        Self {
            study: StudyId::One,
            cases: CaseId::ALL.to_vec(),
            n_grid: (7..=12).map(|k| 1 << k).collect(),
            d_grid: vec![20],
            alpha: 0.99,
            eps_abs: 0.0,
            replications: 10,
            base_seed: 271,
            cap_factor: 100,
            jobs: None,
        }
    }

    /// Study 1 at full scale: `N = 2^7..2^17`, 100 replications.
    pub fn study1_full() -> Self {
        Self { n_grid: (7..=17).map(|k| 1 << k).collect(), replications: 100, ..Self::study1_desk() }
    }

    /// Study 2 at desk scale: `N = 2^8`, `d = 2^2..2^7`, 10 replications.
    pub fn study2_desk() -> Self {
        Self {
            study: StudyId::Two,
            n_grid: vec![1 << 8],
            d_grid: (2..=7).map(|k| 1 << k).collect(),
            ..Self::study1_desk()
        }
    }

    /// Study 2 at full scale: `d = 2^2..2^10`, 100 replications.
    pub fn study2_full() -> Self {
        Self { d_grid: (2..=10).map(|k| 1 << k).collect(), replications: 100, ..Self::study2_desk() }
    }

    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.cases.is_empty() || self.n_grid.is_empty() || self.d_grid.is_empty() {
            return Err(Error::domain("study grids must be nonempty"));
        }
        if self.replications == 0 {
            return Err(Error::domain("need at least one replication"));
        }
        if self.cap_factor == 0 {
            return Err(Error::domain("cap_factor must be positive"));
        }
        Ok(())
    }
}

/// ARA scenario grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AraGridSpec {
    pub cases: Vec<CaseId>,
    pub d_list: Vec<usize>,
    pub eps_joint_list: Vec<f64>,
    pub eps_individual_list: Vec<f64>,
    pub k: Vec<u32>,
    pub alpha: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub max_column_rearrangements: Option<usize>,
    pub jobs: Option<usize>,
}

impl AraGridSpec {
    /// Desk scale: `d = 20`, `K = 8..14`, 10 replications.
    pub fn desk() -> Self {
        Self {
            cases: CaseId::ALL.to_vec(),
            d_list: vec![20],
            eps_joint_list: vec![0.005, 0.01, 0.02],
            eps_individual_list: vec![0.0, 0.001],
            k: (8..=14).collect(),
            alpha: 0.99,
            replications: 10,
            base_seed: 271,
            max_column_rearrangements: None,
            jobs: None,
        }
    }

    /// The 48-scenario grid: `d` in {20, 100}, `K = 8..19`, 100 replications.
    pub fn full() -> Self {
        Self { d_list: vec![20, 100], k: (8..=19).collect(), replications: 100, ..Self::desk() }
    }

    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.cases.is_empty()
            || self.d_list.is_empty()
            || self.eps_joint_list.is_empty()
            || self.eps_individual_list.is_empty()
        {
            return Err(Error::domain("ARA grids must be nonempty"));
        }
        if self.replications == 0 {
            return Err(Error::domain("need at least one replication"));
        }
        Ok(())
    }
}

fn ser_g15<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format_g15(*x))
}

fn ser_opt_g15<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_str(&format_g15(*v)),
        None => s.serialize_none(),
    }
}

/// Formats like C's `%.15g`.
pub fn format_g15(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.14e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let m = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// One replication of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    /// `1`, `2` (RA studies) or `ara`.
    pub study: String,
    pub case_id: String,
    pub d: usize,
    /// Row count behind the reported bounds (`N_used` for ARA).
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    /// RA: absolute tolerance. ARA: individual relative tolerance.
    #[serde(serialize_with = "ser_g15")]
    pub tolerance: f64,
    /// ARA joint relative tolerance.
    #[serde(serialize_with = "ser_opt_g15")]
    pub eps_joint: Option<f64>,
    #[serde(serialize_with = "ser_g15")]
    pub s_lower: f64,
    #[serde(serialize_with = "ser_g15")]
    pub s_upper: f64,
    #[serde(serialize_with = "ser_g15")]
    pub relative_range: f64,
    #[serde(serialize_with = "ser_g15")]
    pub runtime_seconds: f64,
    pub cols_lower: usize,
    pub cols_upper: usize,
    pub opp_lower: usize,
    pub opp_upper: usize,
    pub converged_lower: bool,
    pub converged_upper: bool,
    pub n_used: Option<usize>,
    pub joint_converged: Option<bool>,
    /// Empty unless the run failed; numeric fields are then NaN or zero.
    pub error: String,
}

impl ReplicationRecord {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

/// Empirical mean and 95% percentile interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub median: f64,
}

/// Type-7 sample quantile (linear interpolation between order statistics).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        Self {
            mean,
            lo: percentile(&v, 0.025),
            hi: percentile(&v, 0.975),
            median: percentile(&v, 0.5),
        }
    }
}

/// Replication statistics of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub study: String,
    pub case_id: String,
    pub d: usize,
    /// `None` for ARA cells, whose `N` varies by replication.
    pub n: Option<usize>,
    pub tolerance: f64,
    pub eps_joint: Option<f64>,
    pub replications: usize,
    pub failures: usize,
    pub s_lower: Stats,
    pub s_upper: Stats,
    pub relative_range: Stats,
    pub runtime_seconds: Stats,
    pub cols_lower: Stats,
    pub cols_upper: Stats,
    pub opp_lower: Stats,
    pub opp_upper: Stats,
    pub n_used: Option<Stats>,
    pub joint_converged_share: Option<f64>,
}

impl CellSummary {
    fn from_records(rows: &[&ReplicationRecord]) -> Self {
        let first = rows[0];
        let ok: Vec<&ReplicationRecord> = rows.iter().copied().filter(|r| !r.failed()).collect();
        let stat = |f: &dyn Fn(&ReplicationRecord) -> f64| Stats::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        let is_ara = first.n_used.is_some() || first.joint_converged.is_some() || first.eps_joint.is_some();
        Self {
            study: first.study.clone(),
            case_id: first.case_id.clone(),
            d: first.d,
            n: if is_ara { None } else { Some(first.n) },
            tolerance: first.tolerance,
            eps_joint: first.eps_joint,
            replications: rows.len(),
            failures: rows.len() - ok.len(),
            s_lower: stat(&|r| r.s_lower),
            s_upper: stat(&|r| r.s_upper),
            relative_range: stat(&|r| r.relative_range),
            runtime_seconds: stat(&|r| r.runtime_seconds),
            cols_lower: stat(&|r| r.cols_lower as f64),
            cols_upper: stat(&|r| r.cols_upper as f64),
            opp_lower: stat(&|r| r.opp_lower as f64),
            opp_upper: stat(&|r| r.opp_upper as f64),
            n_used: is_ara.then(|| stat(&|r| r.n_used.unwrap_or(0) as f64)),
            joint_converged_share: is_ara.then(|| {
                let yes = ok.iter().filter(|r| r.joint_converged == Some(true)).count();
                yes as f64 / ok.len().max(1) as f64
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<CellSummary>,
}

/// Path of the companion summary file: `<stem>_summary.csv` next to `out`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("study");
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn run_tasks<T, F>(n_tasks: usize, jobs: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n_tasks).into_par_iter().map(&f).collect()))
}

fn summarise(records: &[ReplicationRecord], cell_of: &[usize], n_cells: usize) -> Vec<CellSummary> {
    let mut groups: Vec<Vec<&ReplicationRecord>> = vec![Vec::new(); n_cells];
    for (r, &c) in records.iter().zip(cell_of) {
        groups[c].push(r);
    }
    groups.iter().filter(|g| !g.is_empty()).map(|g| CellSummary::from_records(g)).collect()
}

fn failed_record(base: ReplicationRecord, err: &Error) -> ReplicationRecord {
    ReplicationRecord {
        s_lower: f64::NAN,
        s_upper: f64::NAN,
        relative_range: f64::NAN,
        error: err.to_string(),
        ..base
    }
}

/// Runs an RA replication study. With `out` set, writes the records there and
/// the per-cell summary to [`summary_path`].
pub fn run_study(spec: &StudySpec, out: Option<&Path>) -> Result<StudyResult> {
    spec.validate()?;
    let study = match spec.study {
        StudyId::One => "1",
        StudyId::Two => "2",
    };
    let mut cells = Vec::new();
    for &case in &spec.cases {
        for &d in &spec.d_grid {
            for &n in &spec.n_grid {
                cells.push((case, d, n));
            }
        }
    }
    let b = spec.replications;
    let records = run_tasks(cells.len() * b, spec.jobs, |task| {
        let (case, d, n) = cells[task / b];
        let rep = task % b;
        let seed = replication_seed(spec.base_seed, rep);
        let base = ReplicationRecord {
            study: study.to_string(),
            case_id: case.to_string(),
            d,
            n,
            replication: rep,
            seed,
            tolerance: spec.eps_abs,
            eps_joint: None,
            s_lower: f64::NAN,
            s_upper: f64::NAN,
            relative_range: f64::NAN,
            runtime_seconds: 0.0,
            cols_lower: 0,
            cols_upper: 0,
            opp_lower: 0,
            opp_upper: 0,
            converged_lower: false,
            converged_upper: false,
            n_used: None,
            joint_converged: None,
            error: String::new(),
        };
        let cfg = RearrangeConfig {
            tolerance: Tolerance::Absolute(spec.eps_abs),
            max_column_rearrangements: Some(spec.cap_factor * d),
            seed,
            ..RearrangeConfig::default()
        };
        let start = Instant::now();
        let res = case_margins(&CaseSpec::new(case, d)).and_then(|m| ra_with(&m, spec.alpha, n, &cfg));
        let runtime_seconds = start.elapsed().as_secs_f64();
        match res {
            Ok(o) => ReplicationRecord {
                s_lower: o.lower.bound,
                s_upper: o.upper.bound,
                relative_range: o.relative_range,
                runtime_seconds,
                cols_lower: o.lower.columns_rearranged,
                cols_upper: o.upper.columns_rearranged,
                opp_lower: o.lower.opp_ordered_columns,
                opp_upper: o.upper.opp_ordered_columns,
                converged_lower: o.lower.tolerance_reached,
                converged_upper: o.upper.tolerance_reached,
                ..base
            },
            Err(e) => failed_record(ReplicationRecord { runtime_seconds, ..base }, &e),
        }
    })?;
    let cell_of: Vec<usize> = (0..records.len()).map(|i| i / b).collect();
    let summaries = summarise(&records, &cell_of, cells.len());
    let result = StudyResult { records, summaries };
    if let Some(path) = out {
        write_outputs(&result, path)?;
    }
    Ok(result)
}

/// Runs the ARA scenario grid (cases x d x eps_joint x eps_individual).
pub fn run_ara_grid(spec: &AraGridSpec, out: Option<&Path>) -> Result<StudyResult> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &case in &spec.cases {
        for &d in &spec.d_list {
            for &e2 in &spec.eps_joint_list {
                for &e1 in &spec.eps_individual_list {
                    cells.push((case, d, e2, e1));
                }
            }
        }
    }
    let b = spec.replications;
    let records = run_tasks(cells.len() * b, spec.jobs, |task| {
        let (case, d, e2, e1) = cells[task / b];
        let rep = task % b;
        let seed = replication_seed(spec.base_seed, rep);
        let base = ReplicationRecord {
            study: "ara".to_string(),
            case_id: case.to_string(),
            d,
            n: 0,
            replication: rep,
            seed,
            tolerance: e1,
            eps_joint: Some(e2),
            s_lower: f64::NAN,
            s_upper: f64::NAN,
            relative_range: f64::NAN,
            runtime_seconds: 0.0,
            cols_lower: 0,
            cols_upper: 0,
            opp_lower: 0,
            opp_upper: 0,
            converged_lower: false,
            converged_upper: false,
            n_used: Some(0),
            joint_converged: Some(false),
            error: String::new(),
        };
        let cfg = AraConfig {
            k: spec.k.clone(),
            eps_individual: e1,
            eps_joint: e2,
            max_column_rearrangements: spec.max_column_rearrangements,
            seed,
            ..AraConfig::default()
        };
        let start = Instant::now();
        let res = case_margins(&CaseSpec::new(case, d)).and_then(|m| ara(&m, spec.alpha, &cfg));
        let runtime_seconds = start.elapsed().as_secs_f64();
        match res {
            Ok(o) => ReplicationRecord {
                n: o.n_used,
                s_lower: o.lower.bound,
                s_upper: o.upper.bound,
                relative_range: o.relative_range,
                runtime_seconds,
                cols_lower: o.lower.columns_rearranged,
                cols_upper: o.upper.columns_rearranged,
                opp_lower: o.lower.opp_ordered_columns,
                opp_upper: o.upper.opp_ordered_columns,
                converged_lower: o.lower.tolerance_reached,
                converged_upper: o.upper.tolerance_reached,
                n_used: Some(o.n_used),
                joint_converged: Some(o.joint_converged),
                ..base
            },
            Err(e) => failed_record(ReplicationRecord { runtime_seconds, ..base }, &e),
        }
    })?;
    let cell_of: Vec<usize> = (0..records.len()).map(|i| i / b).collect();
    let summaries = summarise(&records, &cell_of, cells.len());
    let result = StudyResult { records, summaries };
    if let Some(path) = out {
        write_outputs(&result, path)?;
    }
    Ok(result)
}

fn write_outputs(result: &StudyResult, out: &Path) -> Result<()> {
    write_records(&result.records, out)?;
    write_summaries(&result.summaries, &summary_path(out))
}

pub fn write_records(records: &[ReplicationRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ReplicationRecord>, _>>()?;
    Ok(rows)
}

const SUMMARY_METRICS: [&str; 9] = [
    "s_lower",
    "s_upper",
    "relative_range",
    "runtime_seconds",
    "cols_lower",
    "cols_upper",
    "opp_lower",
    "opp_upper",
    "n_used",
];

pub fn write_summaries(rows: &[CellSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["study", "case_id", "d", "n", "tolerance", "eps_joint", "replications", "failures"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in SUMMARY_METRICS {
        for suffix in ["mean", "ci_lo", "ci_hi", "median"] {
            header.push(format!("{m}_{suffix}"));
        }
    }
    header.push("joint_converged_share".into());
    w.write_record(&header)?;

    let opt = |v: Option<String>| v.unwrap_or_default();
    for s in rows {
        let mut rec = vec![
            s.study.clone(),
            s.case_id.clone(),
            s.d.to_string(),
            opt(s.n.map(|n| n.to_string())),
            format_g15(s.tolerance),
            opt(s.eps_joint.map(format_g15)),
            s.replications.to_string(),
            s.failures.to_string(),
        ];
        let stats = [
            Some(s.s_lower),
            Some(s.s_upper),
            Some(s.relative_range),
            Some(s.runtime_seconds),
            Some(s.cols_lower),
            Some(s.cols_upper),
            Some(s.opp_lower),
            Some(s.opp_upper),
            s.n_used,
        ];
        for st in stats {
            match st {
                Some(st) => rec.extend([st.mean, st.lo, st.hi, st.median].map(format_g15)),
                None => rec.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        rec.push(opt(s.joint_converged_share.map(format_g15)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
