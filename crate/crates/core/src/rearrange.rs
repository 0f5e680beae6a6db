//! Rearrangement Algorithm (RA) and Adaptive Rearrangement Algorithm (ARA).
//!
//! The worst VaR of `L1 + ... + Ld` is approximated by the largest minimal row
//! sum attainable by permuting, within columns, an `N x d` matrix of marginal
//! quantiles on `[alpha, 1]`. Two discretisations (lower/upper) bracket the
//! answer. Each step oppositely orders one column against the sum of the
//! others, which can never decrease the minimal row sum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{check_alpha, Error, Result};
use crate::margins::MarginRef;

/// Which discretisation of the quantile functions a matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatrixKind {
    /// Left end points of the `N` level cells.
    Lower,
    /// Right end points; an infinite last quantile is replaced by the value
    /// at the cell midpoint.
    Upper,
}

/// An `N x d` matrix stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMatrix {
    columns: Vec<Vec<f64>>,
    /// Nominal probability level of each row; empty for hand-built matrices.
    levels: Vec<f64>,
    kind: Option<MatrixKind>,
    alpha: Option<f64>,
}

impl QuantileMatrix {
    /// Wraps arbitrary finite columns of equal length.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::domain("matrix needs at least one row and one column"));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::domain(format!(
                    "column {j} has {} rows, expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteEntry { row: i, col: j, value: col[i] });
            }
        }
        Ok(Self { columns, levels: Vec::new(), kind: None, alpha: None })
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.columns[j][i]
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn kind(&self) -> Option<MatrixKind> {
        self.kind
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// Row sums, accumulated left to right over the columns.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = self.columns[0].clone();
        for col in &self.columns[1..] {
            for (s, v) in sums.iter_mut().zip(col) {
                *s += v;
            }
        }
        sums
    }

    pub fn min_row_sum(&self) -> f64 {
        self.row_sums().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max_row_sum(&self) -> f64 {
        self.row_sums().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_shape(margins: &[MarginRef], n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::domain(format!("N = {n} must be at least 2")));
    }
    if margins.len() < 2 {
        return Err(Error::domain(format!("d = {} must be at least 2", margins.len())));
    }
    Ok(())
}

fn fill_columns(
    margins: &[MarginRef],
    n: usize,
    mut entry: impl FnMut(&MarginRef, usize) -> f64,
) -> Result<Vec<Vec<f64>>> {
    let mut columns = Vec::with_capacity(margins.len());
    for (j, m) in margins.iter().enumerate() {
        let mut col = Vec::with_capacity(n);
        for i in 0..n {
            let v = entry(m, i);
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j, value: v });
            }
            col.push(v);
        }
        columns.push(col);
    }
    Ok(columns)
}

/// Quantile matrix on `[alpha, 1]`: row `i` (1-based) holds
/// `F_j⁻(alpha + (1 - alpha)(i - 1)/N)` (lower) or
/// `F_j⁻(alpha + (1 - alpha) i/N)` (upper). For the upper kind an infinite
/// `F_j⁻(1)` is replaced by `F_j⁻(alpha + (1 - alpha)(N - 1/2)/N)`.
pub fn build_matrix(margins: &[MarginRef], alpha: f64, n: usize, kind: MatrixKind) -> Result<QuantileMatrix> {
    check_alpha(alpha)?;
    check_shape(margins, n)?;
    let q = 1.0 - alpha;
    let nf = n as f64;
    // levels are handled through their complements u = 1 - p so that the
    // tail cells keep full precision
    let u_of = |i: usize| match kind {
        MatrixKind::Lower => q * (nf - i as f64) / nf,
        MatrixKind::Upper => q * (nf - i as f64 - 1.0) / nf,
    };
    let columns = fill_columns(margins, n, |m, i| {
        let u = u_of(i);
        let v = m.quantile_upper(u);
        if kind == MatrixKind::Upper && i == n - 1 && v == f64::INFINITY {
            m.quantile_upper(q / (2.0 * nf))
        } else {
            v
        }
    })?;
    let levels = (0..n).map(|i| 1.0 - u_of(i)).collect();
    Ok(QuantileMatrix { columns, levels, kind: Some(kind), alpha: Some(alpha) })
}

/// Quantile matrix on `[0, alpha]` for the best-VaR (min-max) variant:
/// `F_j⁻(alpha (i - 1)/N)` (lower) or `F_j⁻(alpha i/N)` (upper).
pub fn build_matrix_best(margins: &[MarginRef], alpha: f64, n: usize, kind: MatrixKind) -> Result<QuantileMatrix> {
    check_alpha(alpha)?;
    check_shape(margins, n)?;
    let nf = n as f64;
    let p_of = |i: usize| match kind {
        MatrixKind::Lower => alpha * i as f64 / nf,
        MatrixKind::Upper => alpha * (i as f64 + 1.0) / nf,
    };
    let columns = fill_columns(margins, n, |m, i| m.quantile(p_of(i)))?;
    let levels = (0..n).map(p_of).collect();
    Ok(QuantileMatrix { columns, levels, kind: Some(kind), alpha: Some(alpha) })
}

/// Row order used to oppositely order a column: decreasing `other_sum`; rows
/// with equal `other_sum` keep the relative order of their current values.
fn opposite_rank(column: &[f64], other_sum: &[f64], idx: &mut Vec<usize>) {
    idx.clear();
    idx.extend(0..column.len());
    idx.sort_unstable_by(|&a, &b| {
        other_sum[b]
            .total_cmp(&other_sum[a])
            .then(column[a].total_cmp(&column[b]))
            .then(a.cmp(&b))
    });
}

/// Permutes `column` so that it is oppositely ordered to `other_sum`: the
/// smallest `other_sum` receives the largest value. Among rows with equal
/// `other_sum` the values keep their relative input order, so an already
/// oppositely ordered column is returned unchanged.
pub fn oppositely_order(column: &[f64], other_sum: &[f64]) -> Result<Vec<f64>> {
    if column.len() != other_sum.len() {
        return Err(Error::domain(format!(
            "column has {} entries but other_sum has {}",
            column.len(),
            other_sum.len()
        )));
    }
    let mut sorted = column.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut idx = Vec::new();
    opposite_rank(column, other_sum, &mut idx);
    let mut out = vec![0.0; column.len()];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = sorted[k];
    }
    Ok(out)
}

/// `(a_i - a_k)(b_i - b_k) <= 0` for all `i, k`.
pub fn is_oppositely_ordered(a: &[f64], b: &[f64]) -> bool {
    let mut idx: Vec<usize> = (0..b.len()).collect();
    idx.sort_unstable_by(|&x, &y| b[x].total_cmp(&b[y]));
    // walk groups of equal b in increasing order; every value in a group
    // must not exceed any value of an earlier (smaller-b) group
    let mut prev_min = f64::INFINITY;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && b[idx[end]] == b[idx[start]] {
            end += 1;
        }
        let group = &idx[start..end];
        let g_max = group.iter().map(|&i| a[i]).fold(f64::NEG_INFINITY, f64::max);
        let g_min = group.iter().map(|&i| a[i]).fold(f64::INFINITY, f64::min);
        if g_max > prev_min {
            return false;
        }
        prev_min = prev_min.min(g_min);
        start = end;
    }
    true
}

fn other_sum_exact(columns: &[Vec<f64>], j: usize) -> Vec<f64> {
    let n = columns[0].len();
    let mut sums = vec![0.0; n];
    for (k, col) in columns.iter().enumerate() {
        if k != j {
            for (s, v) in sums.iter_mut().zip(col) {
                *s += v;
            }
        }
    }
    sums
}

/// Number of columns that are oppositely ordered to the sum of the others.
pub fn count_opp_ordered(matrix: &QuantileMatrix) -> usize {
    (0..matrix.d())
        .filter(|&j| is_oppositely_ordered(&matrix.columns[j], &other_sum_exact(&matrix.columns, j)))
        .count()
}

/// When a rearrangement run may stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    /// Stop once every column is oppositely ordered to the sum of the others.
    None,
    /// Stop when the objective moved by at most this much since the same
    /// column was last rearranged.
    Absolute(f64),
    /// As [`Tolerance::Absolute`], relative to the earlier value.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    /// Check after every column step against the value `d` steps earlier.
    EveryColumn,
    /// Check only after complete passes over all columns.
    FullPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Maximise the minimal row sum (worst VaR).
    MaxMin,
    /// Minimise the maximal row sum (best VaR).
    MinMax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RearrangeConfig {
    pub tolerance: Tolerance,
    /// `None` means `10 d`.
    pub max_column_rearrangements: Option<usize>,
    pub seed: u64,
    /// ChaCha stream; the lower and upper runs of RA/ARA use 0 and 1.
    pub stream: u64,
    pub check: CheckMode,
    pub objective: Objective,
    /// Randomly permute each column before the first step.
    pub randomize: bool,
}

impl Default for RearrangeConfig {
    fn default() -> Self {
        Self {
            tolerance: Tolerance::Absolute(0.0),
            max_column_rearrangements: None,
            seed: 0,
            stream: 0,
            check: CheckMode::EveryColumn,
            objective: Objective::MaxMin,
            randomize: true,
        }
    }
}

impl RearrangeConfig {
    pub fn cap(&self, d: usize) -> usize {
        self.max_column_rearrangements.unwrap_or(10 * d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RearrangeOutcome {
    /// Minimal (max-min) or maximal (min-max) row sum of the final matrix.
    pub bound: f64,
    pub row_sums: Vec<f64>,
    /// Column steps performed (including steps that changed nothing).
    pub columns_rearranged: usize,
    pub opp_ordered_columns: usize,
    /// Whether the run stopped on its tolerance rather than on the cap.
    pub tolerance_reached: bool,
    pub final_matrix: QuantileMatrix,
    /// Objective after the random permutation, before the first step.
    pub initial_bound: f64,
    /// Objective after each column step.
    pub trace: Vec<f64>,
}

fn objective_of(obj: Objective, sums: &[f64]) -> f64 {
    match obj {
        Objective::MaxMin => sums.iter().copied().fold(f64::INFINITY, f64::min),
        Objective::MinMax => sums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn within(tol: Tolerance, old: f64, new: f64) -> bool {
    match tol {
        Tolerance::None => false,
        Tolerance::Absolute(eps) => (new - old).abs() <= eps,
        Tolerance::Relative(eps) => ((new - old) / old).abs() <= eps,
    }
}

/// Runs the rearrangement iteration on `matrix`.
///
/// Columns are first shuffled (seeded), then oppositely ordered one at a time
/// in cyclic order. Row sums are updated incrementally; the returned
/// `row_sums` and `bound` are recomputed from the final matrix.
pub fn rearrange(matrix: &QuantileMatrix, cfg: &RearrangeConfig) -> Result<RearrangeOutcome> {
    let d = matrix.d();
    let n = matrix.n();
    let cap = cfg.cap(d);
    if cap < d {
        return Err(Error::domain(format!(
            "max_column_rearrangements = {cap} is below d = {d}"
        )));
    }
    match cfg.tolerance {
        Tolerance::Absolute(e) | Tolerance::Relative(e) if !(e >= 0.0) => {
            return Err(Error::domain(format!("tolerance {e} must be >= 0")));
        }
        _ => {}
    }

    let mut cols = matrix.columns.clone();
    if cfg.randomize {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        rng.set_stream(cfg.stream);
        for col in &mut cols {
            col.shuffle(&mut rng);
        }
    }
    let sorted: Vec<Vec<f64>> = matrix
        .columns
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_unstable_by(f64::total_cmp);
            s
        })
        .collect();

    let exact_sums = |cols: &[Vec<f64>]| {
        let mut s = cols[0].clone();
        for c in &cols[1..] {
            for (a, b) in s.iter_mut().zip(c) {
                *a += b;
            }
        }
        s
    };
    let mut row_sums = exact_sums(&cols);
    let initial_bound = objective_of(cfg.objective, &row_sums);
    let mut trace: Vec<f64> = Vec::with_capacity(cap);
    let mut other = vec![0.0; n];
    let mut idx = Vec::with_capacity(n);
    let mut new_col = vec![0.0; n];
    let mut unchanged_run = 0usize;
    let mut pass_changed = false;
    let mut tolerance_reached = false;

    for step in 1..=cap {
        let j = (step - 1) % d;
        let col = &mut cols[j];
        for i in 0..n {
            other[i] = row_sums[i] - col[i];
        }
        match cfg.objective {
            // both objectives are served by opposite ordering
            Objective::MaxMin | Objective::MinMax => opposite_rank(col, &other, &mut idx),
        }
        for (k, &i) in idx.iter().enumerate() {
            new_col[i] = sorted[j][k];
        }
        let changed = *col != new_col;
        if changed {
            col.copy_from_slice(&new_col);
            for i in 0..n {
                row_sums[i] = other[i] + col[i];
            }
            unchanged_run = 0;
            pass_changed = true;
        } else {
            unchanged_run += 1;
        }
        if step % d == 0 {
            // refresh to keep incremental rounding from accumulating
            row_sums = exact_sums(&cols);
        }
        let value = objective_of(cfg.objective, &row_sums);
        trace.push(value);

        let check_now = match cfg.check {
            CheckMode::EveryColumn => step >= d,
            CheckMode::FullPass => step % d == 0,
        };
        if check_now {
            let stop = match cfg.tolerance {
                Tolerance::None => match cfg.check {
                    CheckMode::EveryColumn => unchanged_run >= d,
                    CheckMode::FullPass => !pass_changed,
                },
                tol => {
                    let earlier = if step == d { initial_bound } else { trace[step - d - 1] };
                    within(tol, earlier, value)
                }
            };
            if step % d == 0 {
                pass_changed = false;
            }
            if stop {
                tolerance_reached = true;
                break;
            }
        }
    }

    let final_matrix = QuantileMatrix {
        columns: cols,
        levels: matrix.levels.clone(),
        kind: matrix.kind,
        alpha: matrix.alpha,
    };
    let row_sums = final_matrix.row_sums();
    Ok(RearrangeOutcome {
        bound: objective_of(cfg.objective, &row_sums),
        row_sums,
        columns_rearranged: trace.len(),
        opp_ordered_columns: count_opp_ordered(&final_matrix),
        tolerance_reached,
        final_matrix,
        initial_bound,
        trace,
    })
}

/// `|(upper - lower) / upper|`.
pub fn relative_range(lower: f64, upper: f64) -> f64 {
    ((upper - lower) / upper).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RaOutcome {
    pub lower: RearrangeOutcome,
    pub upper: RearrangeOutcome,
    pub relative_range: f64,
}

/// RA for the worst VaR with absolute tolerance `epsilon_abs` and a `10 d`
/// column cap.
pub fn ra(margins: &[MarginRef], alpha: f64, n: usize, epsilon_abs: f64, seed: u64) -> Result<RaOutcome> {
    let cfg = RearrangeConfig {
        tolerance: Tolerance::Absolute(epsilon_abs),
        seed,
        ..RearrangeConfig::default()
    };
    ra_with(margins, alpha, n, &cfg)
}

/// RA with full control over the rearrangement settings. The lower run uses
/// ChaCha stream 0 and the upper run stream 1, whatever `cfg.stream` says.
pub fn ra_with(margins: &[MarginRef], alpha: f64, n: usize, cfg: &RearrangeConfig) -> Result<RaOutcome> {
    let build = match cfg.objective {
        Objective::MaxMin => build_matrix,
        Objective::MinMax => build_matrix_best,
    };
    let run = |kind: MatrixKind, stream: u64| -> Result<RearrangeOutcome> {
        let m = build(margins, alpha, n, kind)?;
        rearrange(&m, &RearrangeConfig { stream, ..*cfg })
    };
    let (lower, upper) = rayon::join(|| run(MatrixKind::Lower, 0), || run(MatrixKind::Upper, 1));
    let (lower, upper) = (lower?, upper?);
    let relative_range = relative_range(lower.bound, upper.bound);
    Ok(RaOutcome { lower, upper, relative_range })
}

/// RA for the best VaR: minimises the maximal row sum over quantile matrices
/// on `[0, alpha]`. Returns the (lower, upper) discretisation bounds.
pub fn ra_best(margins: &[MarginRef], alpha: f64, n: usize, epsilon_abs: f64, seed: u64) -> Result<RaOutcome> {
    let cfg = RearrangeConfig {
        tolerance: Tolerance::Absolute(epsilon_abs),
        seed,
        objective: Objective::MinMax,
        ..RearrangeConfig::default()
    };
    ra_with(margins, alpha, n, &cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AraConfig {
    /// Exponents `k`; the runs use `N = 2^k`. Strictly increasing.
    pub k: Vec<u32>,
    /// Individual relative tolerance for each rearrangement run.
    pub eps_individual: f64,
    /// Joint relative tolerance on `|(upper - lower)/upper|`.
    pub eps_joint: f64,
    /// Column-step cap per `k`; `None` means `10 d`.
    pub max_column_rearrangements: Option<usize>,
    pub seed: u64,
    pub check: CheckMode,
}

impl Default for AraConfig {
    fn default() -> Self {
        Self {
            k: (8..=19).collect(),
            eps_individual: 0.0,
            eps_joint: 0.01,
            max_column_rearrangements: None,
            seed: 0,
            check: CheckMode::EveryColumn,
        }
    }
}

impl AraConfig {
    fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("K must be nonempty and strictly increasing"));
        }
        if self.k.iter().any(|&k| !(1..=40).contains(&k)) {
            return Err(Error::domain("exponents in K must lie in 1..=40"));
        }
        if !(self.eps_individual >= 0.0) || !(self.eps_joint > 0.0) {
            return Err(Error::domain(format!(
                "tolerances ({}, {}) need eps1 >= 0 and eps2 > 0",
                self.eps_individual, self.eps_joint
            )));
        }
        Ok(())
    }

    /// Rearrangement settings used for every `k`.
    pub fn rearrange_config(&self) -> RearrangeConfig {
        RearrangeConfig {
            tolerance: Tolerance::Relative(self.eps_individual),
            max_column_rearrangements: self.max_column_rearrangements,
            seed: self.seed,
            check: self.check,
            ..RearrangeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AraOutcome {
    pub lower: RearrangeOutcome,
    pub upper: RearrangeOutcome,
    pub n_used: usize,
    pub relative_range: f64,
    /// Both individual tolerances and the joint tolerance held at `n_used`.
    pub joint_converged: bool,
}

/// ARA: RA on `N = 2^k` for increasing `k` until both runs meet the
/// individual relative tolerance and the bounds are jointly within
/// `eps_joint`. If `K` runs out, the last results are returned with
/// `joint_converged = false`.
pub fn ara(margins: &[MarginRef], alpha: f64, cfg: &AraConfig) -> Result<AraOutcome> {
    cfg.validate()?;
    let rcfg = cfg.rearrange_config();
    let mut last = None;
    for &k in &cfg.k {
        let n = 1usize << k;
        let out = ra_with(margins, alpha, n, &rcfg)?;
        let converged = out.lower.tolerance_reached
            && out.upper.tolerance_reached
            && out.relative_range <= cfg.eps_joint;
        let result = AraOutcome {
            relative_range: out.relative_range,
            lower: out.lower,
            upper: out.upper,
            n_used: n,
            joint_converged: converged,
        };
        if converged {
            return Ok(result);
        }
        last = Some(result);
    }
    Ok(last.expect("K is nonempty"))
}

/// Largest minimal row sum over all within-column permutations (first column
/// fixed). Exhaustive over the middle columns; the last column is placed
/// optimally by opposite ordering. Refuses `N > 6` or `d > 4`.
pub fn brute_force_maximin(matrix: &QuantileMatrix) -> Result<f64> {
    let (n, d) = (matrix.n(), matrix.d());
    if n > 6 || d > 4 {
        return Err(Error::TooLarge { n, d });
    }
    if d == 1 {
        return Ok(matrix.min_row_sum());
    }
    let perms = permutations(n);
    let mut best = f64::NEG_INFINITY;
    let mut partial = matrix.columns[0].clone();
    search(matrix, 1, &perms, &mut partial, &mut best);
    Ok(best)
}

fn search(m: &QuantileMatrix, j: usize, perms: &[Vec<usize>], partial: &mut Vec<f64>, best: &mut f64) {
    let d = m.d();
    if j == d - 1 {
        // maximising min(partial + pi(column)) is solved by opposite ordering
        let last = oppositely_order(&m.columns[j], partial).expect("equal lengths");
        let v = partial
            .iter()
            .zip(&last)
            .map(|(a, b)| a + b)
            .fold(f64::INFINITY, f64::min);
        if v > *best {
            *best = v;
        }
        return;
    }
    let saved = partial.clone();
    for p in perms {
        for (i, &pi) in p.iter().enumerate() {
            partial[i] = saved[i] + m.columns[j][pi];
        }
        search(m, j + 1, perms, partial, best);
    }
    partial.copy_from_slice(&saved);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Exhaustive maximin without the opposite-ordering shortcut; tiny matrices
/// only. Kept separate so the shortcut itself can be tested.
#[cfg(test)]
fn brute_force_maximin_naive(matrix: &QuantileMatrix) -> f64 {
    let (n, d) = (matrix.n(), matrix.d());
    let perms = permutations(n);
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; d.saturating_sub(1)];
    loop {
        let mut min = f64::INFINITY;
        for (i, &x) in matrix.columns[0].iter().enumerate() {
            let mut s = x;
            for (c, &pi) in choice.iter().enumerate() {
                s += matrix.columns[c + 1][perms[pi][i]];
            }
            min = min.min(s);
        }
        best = best.max(min);
        let mut pos = 0;
        loop {
            if pos == choice.len() {
                return best;
            }
            choice[pos] += 1;
            if choice[pos] < perms.len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::crude_var_bounds;
    use crate::margins::{Pareto, PointMass};
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn par(theta: f64) -> MarginRef {
        Pareto::new(theta).unwrap().into_ref()
    }

    fn sorted(v: &[f64]) -> Vec<f64> {
        let mut s = v.to_vec();
        s.sort_unstable_by(f64::total_cmp);
        s
    }

    fn none_cfg(seed: u64) -> RearrangeConfig {
        RearrangeConfig { tolerance: Tolerance::None, seed, ..RearrangeConfig::default() }
    }

    #[test]
    fn lower_matrix_column() {
        let m = build_matrix(&[par(2.0), par(2.0)], 0.99, 4, MatrixKind::Lower).unwrap();
        let expect: Vec<f64> = [0.99, 0.9925, 0.995, 0.9975]
            .iter()
            .map(|&p: &f64| (1.0 - p).powf(-0.5) - 1.0)
            .collect();
        for (a, b) in m.column(0).iter().zip(&expect) {
            assert!(((a - b) / b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!((m.entry(0, 0) - 9.0).abs() < 1e-12 && (m.entry(3, 1) - 19.0).abs() < 1e-12);
        assert!((m.entry(1, 0) - 10.547).abs() < 1e-3 && (m.entry(2, 0) - 13.142).abs() < 1e-3);
    }

    #[test]
    fn upper_matrix_infinity_adjustment() {
        let m = build_matrix(&[par(2.0), par(2.0)], 0.99, 4, MatrixKind::Upper).unwrap();
        let expect = 0.00125f64.powf(-0.5) - 1.0;
        assert!((m.entry(3, 0) - expect).abs() < 1e-12);
        assert!((m.entry(3, 0) - 27.284).abs() < 1e-3);
        assert!((m.entry(0, 0) - 10.547).abs() < 1e-3);

        // bounded margin: F⁻(1) is finite, so no adjustment
        let uniform = crate::margins::CustomMargin::new("u01", |p| p, |x: f64| (1.0 - x).clamp(0.0, 1.0))
            .with_finite_mean(true);
        let m = build_matrix(&[Arc::new(uniform), par(2.0)], 0.5, 4, MatrixKind::Upper).unwrap();
        assert_eq!(m.entry(3, 0), 1.0);
        assert!(m.entry(3, 1) < f64::INFINITY);
    }

    #[test]
    fn lower_dominated_by_upper() {
        let ms = [par(0.5), par(1.5), par(3.0)];
        let lo = build_matrix(&ms, 0.95, 64, MatrixKind::Lower).unwrap();
        let hi = build_matrix(&ms, 0.95, 64, MatrixKind::Upper).unwrap();
        for j in 0..3 {
            for i in 0..64 {
                assert!(lo.entry(i, j) < hi.entry(i, j));
            }
            assert!(lo.column(j).windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn build_rejects_bad_shapes() {
        assert!(build_matrix(&[par(2.0)], 0.99, 4, MatrixKind::Lower).is_err());
        assert!(build_matrix(&[par(2.0), par(2.0)], 0.99, 1, MatrixKind::Lower).is_err());
        assert!(build_matrix(&[par(2.0), par(2.0)], 1.0, 4, MatrixKind::Lower).is_err());
    }

    #[test]
    fn oppositely_order_examples() {
        assert_eq!(oppositely_order(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), vec![3.0, 2.0, 1.0]);
        assert_eq!(oppositely_order(&[5.0, 5.0, 5.0], &[3.0, 1.0, 2.0]).unwrap(), vec![5.0; 3]);
        assert_eq!(oppositely_order(&[1.0, 2.0, 3.0], &[30.0, 10.0, 20.0]).unwrap(), vec![1.0, 3.0, 2.0]);
        assert!(oppositely_order(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn oppositely_order_ties_keep_value_order() {
        // rows 0 and 2 tie on other_sum; their values stay in input order
        let out = oppositely_order(&[4.0, 1.0, 2.0, 9.0], &[5.0, 7.0, 5.0, 0.0]).unwrap();
        assert_eq!(out, vec![4.0, 1.0, 2.0, 9.0]);
        assert_eq!(oppositely_order(&out, &[5.0, 7.0, 5.0, 0.0]).unwrap(), out);
    }

    #[test]
    fn three_by_two_example() {
        let m = QuantileMatrix::from_columns(vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let out = rearrange(&m, &none_cfg(7)).unwrap();
        assert_eq!(out.bound, 4.0);
        assert_eq!(out.row_sums, vec![4.0; 3]);
        assert_eq!(out.opp_ordered_columns, 2);
        assert!(out.tolerance_reached);
        assert_eq!(brute_force_maximin(&m).unwrap(), 4.0);
        assert_eq!(count_opp_ordered(&out.final_matrix), 2);
    }

    #[test]
    fn constant_column_is_noop() {
        let m = QuantileMatrix::from_columns(vec![vec![3.0, 1.0, 2.0], vec![7.0; 3]]).unwrap();
        let out = rearrange(&m, &RearrangeConfig { randomize: false, ..none_cfg(0) }).unwrap();
        assert_eq!(out.final_matrix.column(1), &[7.0; 3]);
        let consts = QuantileMatrix::from_columns(vec![vec![1.0; 4], vec![2.0; 4], vec![0.5; 4]]).unwrap();
        assert_eq!(count_opp_ordered(&consts), 3);
    }

    #[test]
    fn brute_force_examples() {
        let single = QuantileMatrix::from_columns(vec![vec![4.0, 2.0, 9.0]]).unwrap();
        assert_eq!(brute_force_maximin(&single).unwrap(), 2.0);
        let m = QuantileMatrix::from_columns(vec![vec![0.0, 10.0], vec![0.0, 10.0]]).unwrap();
        assert_eq!(brute_force_maximin(&m).unwrap(), 10.0);
        let big = QuantileMatrix::from_columns(vec![vec![0.0; 7], vec![0.0; 7]]).unwrap();
        assert!(matches!(brute_force_maximin(&big), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn brute_force_shortcut_matches_naive() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.random_range(2..=4);
            let d = rng.random_range(2..=3);
            let cols = (0..d).map(|_| (0..n).map(|_| rng.random_range(0..20) as f64).collect()).collect();
            let m = QuantileMatrix::from_columns(cols).unwrap();
            assert_eq!(brute_force_maximin(&m).unwrap(), brute_force_maximin_naive(&m));
        }
    }

    #[test]
    fn point_masses_give_exact_sum() {
        let ms: Vec<MarginRef> = (0..4).map(|_| Arc::new(PointMass { value: 2.5 }) as MarginRef).collect();
        let out = ra(&ms, 0.99, 16, 0.0, 1).unwrap();
        assert_eq!(out.lower.bound, 10.0);
        assert_eq!(out.upper.bound, 10.0);
        assert_eq!(out.relative_range, 0.0);
    }

    #[test]
    fn ra_case_ll_within_crude_bounds() {
        let ms: Vec<MarginRef> = (0..20).map(|j| par(1.6 - 0.2 * j as f64 / 19.0)).collect();
        let out = ra(&ms, 0.99, 256, 0.0, 3).unwrap();
        let (lo, hi) = crude_var_bounds(&ms, 0.99).unwrap();
        assert!(out.lower.bound <= out.upper.bound);
        for b in [out.lower.bound, out.upper.bound] {
            assert!(lo <= b && b <= hi);
        }
    }

    #[test]
    fn strict_pass_mode_terminates_on_passes() {
        let ms: Vec<MarginRef> = (0..5).map(|_| par(2.0)).collect();
        let m = build_matrix(&ms, 0.99, 64, MatrixKind::Lower).unwrap();
        let cfg = RearrangeConfig { check: CheckMode::FullPass, max_column_rearrangements: Some(1000), ..RearrangeConfig::default() };
        let out = rearrange(&m, &cfg).unwrap();
        assert!(out.tolerance_reached);
        assert_eq!(out.columns_rearranged % 5, 0);
    }

    #[test]
    fn cap_sets_flag() {
        let ms: Vec<MarginRef> = (0..6).map(|j| par(0.5 + 0.2 * j as f64)).collect();
        let m = build_matrix(&ms, 0.99, 512, MatrixKind::Upper).unwrap();
        let out = rearrange(&m, &RearrangeConfig { max_column_rearrangements: Some(6), ..none_cfg(1) }).unwrap();
        assert_eq!(out.columns_rearranged, 6);
        assert!(!out.tolerance_reached);
        assert!(rearrange(&m, &RearrangeConfig { max_column_rearrangements: Some(5), ..none_cfg(1) }).is_err());
    }

    #[test]
    fn ara_single_k_is_ra() {
        let ms: Vec<MarginRef> = (0..8).map(|j| par(0.6 - 0.2 * j as f64 / 7.0)).collect();
        let cfg = AraConfig { k: vec![9], seed: 5, ..AraConfig::default() };
        let a = ara(&ms, 0.99, &cfg).unwrap();
        let r = ra_with(&ms, 0.99, 512, &cfg.rearrange_config()).unwrap();
        assert_eq!(a.lower, r.lower);
        assert_eq!(a.upper, r.upper);
        assert_eq!(a.n_used, 512);
    }

    #[test]
    fn ara_rejects_bad_config() {
        let ms = vec![par(2.0), par(2.0)];
        for cfg in [
            AraConfig { k: vec![], ..AraConfig::default() },
            AraConfig { k: vec![9, 8], ..AraConfig::default() },
            AraConfig { eps_joint: 0.0, ..AraConfig::default() },
        ] {
            assert!(ara(&ms, 0.99, &cfg).is_err());
        }
    }

    #[test]
    fn best_var_variant_is_sane() {
        let ms: Vec<MarginRef> = (0..4).map(|_| par(2.0)).collect();
        let out = ra_best(&ms, 0.99, 256, 0.0, 2).unwrap();
        assert!(out.lower.bound <= out.upper.bound);
        // best VaR cannot exceed comonotone VaR, d F⁻(alpha)
        assert!(out.upper.bound <= 4.0 * 9.0 + 1e-9);
        assert!(out.lower.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    fn small_matrix() -> impl Strategy<Value = QuantileMatrix> {
        (2usize..=5, 2usize..=3).prop_flat_map(|(n, d)| {
            proptest::collection::vec(proptest::collection::vec(0.0f64..100.0, n), d)
                .prop_map(|cols| QuantileMatrix::from_columns(cols).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn rearrange_properties(m in small_matrix(), seed in any::<u64>()) {
            let out = rearrange(&m, &RearrangeConfig { seed, ..RearrangeConfig::default() }).unwrap();
            for j in 0..m.d() {
                prop_assert_eq!(sorted(out.final_matrix.column(j)), sorted(m.column(j)));
            }
            prop_assert!(out.columns_rearranged <= 10 * m.d());
            let slack = 1e-12 * out.initial_bound.abs().max(1.0);
            let mut prev = out.initial_bound;
            for &v in &out.trace {
                prop_assert!(v >= prev - slack);
                prev = v;
            }
            prop_assert!(out.bound <= brute_force_maximin(&m).unwrap());
            let again = rearrange(&m, &RearrangeConfig { seed, ..RearrangeConfig::default() }).unwrap();
            prop_assert_eq!(again, out);
        }

        #[test]
        fn none_tolerance_ends_fully_opposite(
            cols in (3usize..=12, 2usize..=4).prop_flat_map(|(n, d)| {
                proptest::collection::vec(proptest::collection::vec(0u8..50, n), d)
            }),
            seed in any::<u64>(),
        ) {
            let cols: Vec<Vec<f64>> = cols.into_iter().map(|c| c.into_iter().map(f64::from).collect()).collect();
            let m = QuantileMatrix::from_columns(cols).unwrap();
            let cfg = RearrangeConfig { max_column_rearrangements: Some(10_000), ..none_cfg(seed) };
            let out = rearrange(&m, &cfg).unwrap();
            if out.tolerance_reached {
                prop_assert_eq!(out.opp_ordered_columns, m.d());
            }
        }

        #[test]
        fn oppositely_order_is_opposite_permutation(
            pairs in proptest::collection::vec((0u8..10, 0u8..10), 1..40)
        ) {
            let col: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let other: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let out = oppositely_order(&col, &other).unwrap();
            prop_assert_eq!(sorted(&out), sorted(&col));
            prop_assert!(is_oppositely_ordered(&out, &other));
            prop_assert_eq!(oppositely_order(&out, &other).unwrap(), out);
        }
    }
}
