//! Observation storage, covariate subsetting, rescaling, and
//! sample-splitting bookkeeping.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A covariate group: a label and the encoded columns it spans.
///
/// One-hot blocks from a categorical column form a single group, so
/// "leave out covariate group" drops all of its encoded columns at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateGroup {
    pub label: String,
    pub cols: Vec<usize>,
}

/// n observations of (X in R^d, A in {0,1}, Y in R) with named covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Vec<f64>, // row-major n x d
    a: Vec<u8>,
    y: Vec<f64>,
    names: Vec<String>,
    groups: Vec<CovariateGroup>,
}

impl Dataset {
    /// Build a dataset from parts, validating the type invariants:
    /// binary treatment, finite values, n >= 2, d >= 1, both arms non-empty.
    pub fn new(
        x: Vec<f64>,
        a: Vec<u8>,
        y: Vec<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let d = names.len();
        if d == 0 {
            return Err(Error::Validation("need at least one covariate".into()));
        }
        let n = a.len();
        if n < 2 {
            return Err(Error::Validation(format!("need n >= 2 observations, got {n}")));
        }
        if y.len() != n || x.len() != n * d {
            return Err(Error::Validation(format!(
                "shape mismatch: n={n}, d={d}, |x|={}, |y|={}",
                x.len(),
                y.len()
            )));
        }
        if a.iter().any(|&v| v > 1) {
            return Err(Error::Validation("treatment values must be exactly 0 or 1".into()));
        }
        let n1 = a.iter().filter(|&&v| v == 1).count();
        if n1 == 0 || n1 == n {
            return Err(Error::Validation("both treatment arms must be non-empty".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("covariates and outcome must be finite".into()));
        }
        let groups = names
            .iter()
            .enumerate()
            .map(|(j, name)| CovariateGroup { label: name.clone(), cols: vec![j] })
            .collect();
        Ok(Dataset { x, a, y, names: names.to_vec(), groups })
    }

    /// Replace the default singleton grouping. Groups must cover disjoint,
    /// valid column indices; columns left out stay as singleton groups.
    pub fn set_groups(&mut self, groups: Vec<CovariateGroup>) -> Result<()> {
        let d = self.d();
        let mut seen = BTreeSet::new();
        for g in &groups {
            if g.cols.is_empty() {
                return Err(Error::Config(format!("group '{}' has no columns", g.label)));
            }
            for &c in &g.cols {
                if c >= d {
                    return Err(Error::Config(format!(
                        "group '{}' references column {c} but d={d}",
                        g.label
                    )));
                }
                if !seen.insert(c) {
                    return Err(Error::Config(format!("column {c} appears in two groups")));
                }
            }
        }
        let mut all = groups;
        for j in 0..d {
            if !seen.contains(&j) {
                all.push(CovariateGroup { label: self.names[j].clone(), cols: vec![j] });
            }
        }
        all.sort_by_key(|g| g.cols[0]);
        self.groups = all;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn d(&self) -> usize {
        self.names.len()
    }

    pub fn treatment(&self) -> &[u8] {
        &self.a
    }

    pub fn outcome(&self) -> &[f64] {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[CovariateGroup] {
        &self.groups
    }

    /// Covariate value at (row, col).
    #[inline]
    pub fn x(&self, row: usize, col: usize) -> f64 {
        self.x[row * self.d() + col]
    }

    /// Covariate row as a slice.
    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.d();
        &self.x[row * d..(row + 1) * d]
    }

    /// View over all columns.
    pub fn full_view(&self) -> DatasetView<'_> {
        DatasetView { data: self, cols: (0..self.d()).collect() }
    }

    /// Internal view over an explicit retained-column list. Unlike
    /// [`Dataset::exclude`], an empty list is allowed: leave-one-out with
    /// d = 1 needs the intercept-only covariate set.
    pub fn view_cols(&self, cols: Vec<usize>) -> DatasetView<'_> {
        debug_assert!(cols.iter().all(|&c| c < self.d()));
        DatasetView { data: self, cols }
    }

    /// View with the columns in `spec.excluded` removed. Treatment and
    /// outcome are untouched; the underlying storage is shared, not copied.
    pub fn exclude(&self, spec: &SubsetSpec) -> Result<DatasetView<'_>> {
        spec.validate(self.d())?;
        let cols: Vec<usize> = (0..self.d()).filter(|j| !spec.excluded.contains(j)).collect();
        Ok(DatasetView { data: self, cols })
    }

    /// Physically subset the covariate columns (used in tests to compare
    /// against view semantics).
    pub fn select_copy(&self, cols: &[usize]) -> Result<Dataset> {
        if cols.is_empty() {
            return Err(Error::Validation("cannot copy a dataset with zero covariates".into()));
        }
        let n = self.n();
        let mut x = Vec::with_capacity(n * cols.len());
        for i in 0..n {
            for &c in cols {
                x.push(self.x(i, c));
            }
        }
        let names = cols.iter().map(|&c| self.names[c].clone()).collect();
        Dataset::new(x, self.a.clone(), self.y.clone(), names)
    }

    /// Affinely map every covariate column onto [0,1], returning the
    /// rescaled dataset and the per-column (min, range) so coefficients can
    /// be mapped back (rescaled coefficient = original coefficient x range).
    pub fn minmax_rescale(&self) -> Result<(Dataset, Vec<ColumnRange>)> {
        let (n, d) = (self.n(), self.d());
        let mut ranges = Vec::with_capacity(d);
        for j in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..n {
                let v = self.x(i, j);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo <= 0.0 {
                return Err(Error::Validation(format!(
                    "covariate '{}' is constant; rescaling needs a positive range",
                    self.names[j]
                )));
            }
            ranges.push(ColumnRange { min: lo, range: hi - lo });
        }
        let mut x = self.x.clone();
        for i in 0..n {
            for j in 0..d {
                let r = &ranges[j];
                x[i * d + j] = (x[i * d + j] - r.min) / r.range;
            }
        }
        let mut out = Dataset { x, a: self.a.clone(), y: self.y.clone(), names: self.names.clone(), groups: self.groups.clone() };
        out.groups = self.groups.clone();
        Ok((out, ranges))
    }
}

/// Affine map parameters for one rescaled column: x' = (x - min) / range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnRange {
    pub min: f64,
    pub range: f64,
}

impl ColumnRange {
    /// Invert the rescale for a single value.
    pub fn unscale(&self, v: f64) -> f64 {
        v * self.range + self.min
    }
}

/// Borrowed column-subset view of a dataset.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    data: &'a Dataset,
    cols: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn d(&self) -> usize {
        self.cols.len()
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn treatment(&self) -> &[u8] {
        self.data.treatment()
    }

    pub fn outcome(&self) -> &[f64] {
        self.data.outcome()
    }

    pub fn names(&self) -> Vec<String> {
        self.cols.iter().map(|&c| self.data.names[c].clone()).collect()
    }

    /// Copy the retained covariates of `row` into `buf`.
    pub fn fill_row(&self, row: usize, buf: &mut Vec<f64>) {
        buf.clear();
        for &c in &self.cols {
            buf.push(self.data.x(row, c));
        }
    }

    /// Covariate rows for the given observation indices as a dense matrix.
    pub fn gather(&self, rows: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * self.cols.len());
        for &i in rows {
            for &c in &self.cols {
                out.push(self.data.x(i, c));
            }
        }
        out
    }

    /// Further exclusion on top of this view, by original column indices.
    pub fn without_cols(&self, drop: &[usize]) -> DatasetView<'a> {
        let cols = self.cols.iter().copied().filter(|c| !drop.contains(c)).collect();
        DatasetView { data: self.data, cols }
    }
}

/// A set of excluded columns S and optionally a family of such sets.
#[derive(Debug, Clone, Default)]
pub struct SubsetSpec {
    pub excluded: BTreeSet<usize>,
    pub family: Option<Vec<BTreeSet<usize>>>,
}

impl SubsetSpec {
    pub fn of(excluded: impl IntoIterator<Item = usize>) -> Self {
        SubsetSpec { excluded: excluded.into_iter().collect(), family: None }
    }

    /// Validate against the covariate dimension: indices in range, not all
    /// columns excluded, family sets distinct.
    pub fn validate(&self, d: usize) -> Result<()> {
        if let Some(&max) = self.excluded.iter().max() {
            if max >= d {
                return Err(Error::Validation(format!(
                    "excluded column {max} out of range for d={d}"
                )));
            }
        }
        if self.excluded.len() >= d {
            return Err(Error::Validation(
                "cannot exclude all covariates from a dataset view".into(),
            ));
        }
        if let Some(family) = &self.family {
            for (i, s) in family.iter().enumerate() {
                for t in family.iter().skip(i + 1) {
                    if s == t {
                        return Err(Error::Validation("family contains duplicate subsets".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fold labels for K-fold cross-fitting. Regenerating with the same seed
/// reproduces the assignment bit-for-bit.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    /// Observation indices inside fold `k`.
    pub fn fold_rows(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Observation indices outside fold `k` (the training split).
    pub fn train_rows(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != k).collect()
    }
}

/// Deal a seeded random permutation of {0..n} round-robin into K folds,
/// so fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Validation(format!("need K >= 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::Validation(format!("K={k} folds exceed n={n} observations")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    Ok(FoldAssignment { fold_of, k, seed })
}

/// Column-role mapping for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub treatment: String,
    pub outcome: String,
    /// Covariate column names; empty means every remaining column.
    pub covariates: Vec<String>,
    /// Named groups of covariate columns (by original column name).
    pub groups: Vec<(String, Vec<String>)>,
}

/// Load a headered CSV, one-hot encoding categorical covariates with the
/// first (lexicographically smallest) level dropped. Encoded columns keep a
/// shared group label so a named covariate maps to its full encoded block.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Validation(format!("bad header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();

    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column '{name}' not found in {}", path.display())))
    };
    let a_col = col_index(&schema.treatment)?;
    let y_col = col_index(&schema.outcome)?;
    let cov_names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .filter(|h| **h != schema.treatment && **h != schema.outcome)
            .cloned()
            .collect()
    } else {
        schema.covariates.clone()
    };
    if cov_names.is_empty() {
        return Err(Error::Config("need at least one covariate column".into()));
    }
    let cov_cols: Vec<usize> = cov_names.iter().map(|n| col_index(n)).collect::<Result<_>>()?;

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        rows.push(rec.map_err(|e| Error::Validation(format!("bad record: {e}")))?);
    }
    let n = rows.len();

    fn parse_cell<'a>(
        rows: &'a [csv::StringRecord],
        headers: &[String],
        i: usize,
        c: usize,
    ) -> Result<&'a str> {
        let cell = rows[i].get(c).unwrap_or("");
        if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
            return Err(Error::Validation(format!(
                "missing value at row {} column '{}'",
                i + 1,
                headers[c]
            )));
        }
        Ok(cell)
    }

    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let cell = parse_cell(&rows, &headers, i, a_col)?;
        match cell {
            "0" => a.push(0u8),
            "1" => a.push(1u8),
            other => {
                return Err(Error::Validation(format!(
                    "treatment column '{}' has non-binary value '{other}' at row {}",
                    schema.treatment,
                    i + 1
                )))
            }
        }
        let cell = parse_cell(&rows, &headers, i, y_col)?;
        y.push(cell.parse::<f64>().map_err(|_| {
            Error::Validation(format!(
                "outcome column '{}' has non-numeric value '{cell}' at row {}",
                schema.outcome,
                i + 1
            ))
        })?);
    }

    // Per source column: either one numeric encoded column, or (levels-1)
    // one-hot columns with the first sorted level as the reference.
    struct Encoded {
        source: String,
        names: Vec<String>,
        values: Vec<Vec<f64>>, // column-major
    }
    let mut encoded: Vec<Encoded> = Vec::new();
    for (&c, name) in cov_cols.iter().zip(&cov_names) {
        let mut numeric = Vec::with_capacity(n);
        let mut all_numeric = true;
        for i in 0..n {
            let cell = parse_cell(&rows, &headers, i, c)?;
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => numeric.push(v),
                _ => {
                    all_numeric = false;
                    break;
                }
            }
        }
        if all_numeric {
            encoded.push(Encoded {
                source: name.clone(),
                names: vec![name.clone()],
                values: vec![numeric],
            });
        } else {
            let mut levels: Vec<String> = Vec::new();
            let mut cells = Vec::with_capacity(n);
            for i in 0..n {
                let cell = parse_cell(&rows, &headers, i, c)?.to_string();
                if !levels.contains(&cell) {
                    levels.push(cell.clone());
                }
                cells.push(cell);
            }
            levels.sort();
            if levels.len() < 2 {
                return Err(Error::Validation(format!(
                    "categorical covariate '{name}' has a single level"
                )));
            }
            let mut names = Vec::new();
            let mut values = Vec::new();
            for level in levels.iter().skip(1) {
                names.push(format!("{name}={level}"));
                values.push(cells.iter().map(|v| if v == level { 1.0 } else { 0.0 }).collect());
            }
            encoded.push(Encoded { source: name.clone(), names, values });
        }
    }

    let mut names = Vec::new();
    let mut starts = Vec::new();
    for e in &encoded {
        starts.push(names.len());
        names.extend(e.names.iter().cloned());
    }
    let d = names.len();
    let mut x = vec![0.0; n * d];
    for (e, &start) in encoded.iter().zip(&starts) {
        for (off, colvals) in e.values.iter().enumerate() {
            for i in 0..n {
                x[i * d + start + off] = colvals[i];
            }
        }
    }
    let mut ds = Dataset::new(x, a, y, names)?;

    // Group encoded blocks under the source column name, then apply any
    // user-declared multi-column groups on top.
    let mut groups: Vec<CovariateGroup> = Vec::new();
    let block: Vec<(String, Vec<usize>)> = encoded
        .iter()
        .zip(&starts)
        .map(|(e, &s)| (e.source.clone(), (s..s + e.names.len()).collect()))
        .collect();
    let find_block = |src: &str| -> Result<Vec<usize>> {
        block
            .iter()
            .find(|(s, _)| s == src)
            .map(|(_, cols)| cols.clone())
            .ok_or_else(|| Error::Config(format!("group references unknown covariate '{src}'")))
    };
    let mut grouped: BTreeSet<String> = BTreeSet::new();
    for (label, members) in &schema.groups {
        let mut cols = Vec::new();
        for m in members {
            cols.extend(find_block(m)?);
            grouped.insert(m.clone());
        }
        groups.push(CovariateGroup { label: label.clone(), cols });
    }
    for (src, cols) in &block {
        if !grouped.contains(src) {
            groups.push(CovariateGroup { label: src.clone(), cols: cols.clone() });
        }
    }
    ds.set_groups(groups)?;
    Ok(ds)
}
