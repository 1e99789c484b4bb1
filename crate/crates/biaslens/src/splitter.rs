//! Stratified k-fold assignment for multilabel data, train/val/test split
//! construction, and the fold CSV format.
//!
//! Folds are built by iterative stratification: repeatedly take the label
//! with the fewest unassigned positive examples and deal those examples to
//! the fold that most wants the label (largest remaining per-fold desire),
//! breaking ties by largest remaining fold capacity and then by a seeded
//! uniform choice. Examples with no positive labels are dealt last by
//! remaining capacity. With equal fold proportions the desire and capacity
//! comparisons reduce to integer counts, so no float bookkeeping is needed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::LabeledArticle;
use crate::labels::{BiasLabel, BiasVector, NUM_LABELS};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("label matrix must have at least one row")]
    EmptyMatrix,
    #[error("k must be >= 1, got {k}")]
    KTooSmall { k: usize },
    #[error("k = {k} exceeds the {n} available examples")]
    KExceedsExamples { k: usize, n: usize },
    #[error("test fold and validation fold must differ, both are {fold}")]
    SameFold { fold: usize },
    #[error("fold {fold} out of range for k = {k}")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("fold file line {line}: {message}")]
    BadFoldFile { line: usize, message: String },
}

/// Row-per-example binary label matrix (N x 7, N >= 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: Vec<BiasVector>,
}

impl LabelMatrix {
    pub fn new(rows: Vec<BiasVector>) -> Result<Self, SplitError> {
        if rows.is_empty() {
            return Err(SplitError::EmptyMatrix);
        }
        Ok(LabelMatrix { rows })
    }

    pub fn from_labeled(labeled: &[LabeledArticle]) -> Result<Self, SplitError> {
        Self::new(labeled.iter().map(|l| l.labels).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, i: usize) -> &BiasVector {
        &self.rows[i]
    }

    /// Number of positive examples for one label.
    pub fn positives(&self, label: BiasLabel) -> usize {
        self.rows.iter().filter(|r| r.get(label)).count()
    }
}

/// A complete assignment of every example to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    seed: u64,
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn new(k: usize, seed: u64, fold_of: Vec<usize>) -> Result<Self, SplitError> {
        if k < 1 {
            return Err(SplitError::KTooSmall { k });
        }
        if let Some(&bad) = fold_of.iter().find(|&&f| f >= k) {
            return Err(SplitError::FoldOutOfRange { fold: bad, k });
        }
        Ok(FoldAssignment { k, seed, fold_of })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }

    /// Fold id for each example, indexed by example position.
    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// Example indices in `fold`, ascending.
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Pick from `0..k` the fold that minimizes `per_label` (when given) and
/// then `totals`, breaking remaining ties with a seeded uniform draw.
fn select_fold(
    per_label: Option<&dyn Fn(usize) -> usize>,
    totals: &[usize],
    rng: &mut ChaCha8Rng,
) -> usize {
    let k = totals.len();
    let mut tied: Vec<usize> = (0..k).collect();
    if let Some(count) = per_label {
        let best = tied.iter().map(|&j| count(j)).min().unwrap();
        tied.retain(|&j| count(j) == best);
    }
    let best_total = tied.iter().map(|&j| totals[j]).min().unwrap();
    tied.retain(|&j| totals[j] == best_total);
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.gen_range(0..tied.len())]
    }
}

/// Assign every example to one of `k` folds by iterative stratification.
///
/// Deterministic in `(labels, k, seed)`. Within one label's pass the
/// pending examples are processed grouped by their full label pattern so
/// that reordering the input rows permutes the assignment but leaves every
/// per-fold per-label count unchanged.
pub fn iterative_stratified_kfold(
    labels: &LabelMatrix,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, SplitError> {
    let n = labels.len();
    if k < 1 {
        return Err(SplitError::KTooSmall { k });
    }
    if k > n {
        return Err(SplitError::KExceedsExamples { k, n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of: Vec<Option<usize>> = vec![None; n];
    let mut remaining_pos = [0usize; NUM_LABELS];
    for row in &labels.rows {
        for (label, flag) in row.iter() {
            if flag {
                remaining_pos[label.index()] += 1;
            }
        }
    }
    let mut assigned_label = vec![[0usize; NUM_LABELS]; k];
    let mut totals = vec![0usize; k];

    // Label with the fewest unassigned positives; canonical order on ties.
    while let Some(l) = (0..NUM_LABELS)
        .filter(|&l| remaining_pos[l] > 0)
        .min_by_key(|&l| remaining_pos[l])
    {
        let label = BiasLabel::from_index(l).unwrap();
        let mut pending: Vec<usize> = (0..n)
            .filter(|&i| fold_of[i].is_none() && labels.rows[i].get(label))
            .collect();
        pending.sort_by_key(|&i| (labels.rows[i].to_mask(), i));
        for i in pending {
            let counts = |j: usize| assigned_label[j][l];
            let fold = select_fold(Some(&counts), &totals, &mut rng);
            fold_of[i] = Some(fold);
            totals[fold] += 1;
            for (lab, flag) in labels.rows[i].iter() {
                if flag {
                    assigned_label[fold][lab.index()] += 1;
                    remaining_pos[lab.index()] -= 1;
                }
            }
        }
    }

    // Label-free leftovers go to the emptiest fold.
    for slot in fold_of.iter_mut().filter(|slot| slot.is_none()) {
        let fold = select_fold(None, &totals, &mut rng);
        *slot = Some(fold);
        totals[fold] += 1;
    }

    let fold_of: Vec<usize> = fold_of
        .into_iter()
        .map(|f| f.expect("all assigned"))
        .collect();
    FoldAssignment::new(k, seed, fold_of)
}

/// Disjoint train/validation/test index sets, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Carve a fold assignment into test = `test_fold`, val = `val_fold`,
/// train = everything else.
pub fn make_splits(
    folds: &FoldAssignment,
    test_fold: usize,
    val_fold: usize,
) -> Result<Splits, SplitError> {
    if test_fold == val_fold {
        return Err(SplitError::SameFold { fold: test_fold });
    }
    for fold in [test_fold, val_fold] {
        if fold >= folds.k() {
            return Err(SplitError::FoldOutOfRange { fold, k: folds.k() });
        }
    }
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, &f) in folds.fold_of().iter().enumerate() {
        if f == test_fold {
            splits.test.push(i);
        } else if f == val_fold {
            splits.val.push(i);
        } else {
            splits.train.push(i);
        }
    }
    Ok(splits)
}

/// Largest absolute gap between any fold's per-label positive rate and the
/// global rate, over all labels and nonempty folds.
pub fn max_label_rate_gap(labels: &LabelMatrix, folds: &FoldAssignment) -> f64 {
    assert_eq!(
        labels.len(),
        folds.len(),
        "matrix and assignment must align"
    );
    let n = labels.len();
    let sizes = folds.fold_sizes();
    let mut per_fold_pos = vec![[0usize; NUM_LABELS]; folds.k()];
    for (i, &f) in folds.fold_of().iter().enumerate() {
        for (label, flag) in labels.row(i).iter() {
            if flag {
                per_fold_pos[f][label.index()] += 1;
            }
        }
    }
    let mut worst = 0.0f64;
    for label in BiasLabel::ALL {
        let global = labels.positives(label) as f64 / n as f64;
        for j in 0..folds.k() {
            if sizes[j] == 0 {
                continue;
            }
            let rate = per_fold_pos[j][label.index()] as f64 / sizes[j] as f64;
            worst = worst.max((rate - global).abs());
        }
    }
    worst
}

/// Render a fold assignment as CSV with columns `example_index,fold`,
/// preceded by `# seed=` and `# k=` comment lines.
pub fn fold_csv(folds: &FoldAssignment) -> String {
    let mut out = format!("# seed={}\n# k={}\n", folds.seed(), folds.k());
    out.push_str("example_index,fold\n");
    for (i, &f) in folds.fold_of().iter().enumerate() {
        out.push_str(&format!("{i},{f}\n"));
    }
    out
}

/// Parse [`fold_csv`] output. Plain files without the comment lines are
/// accepted: the seed defaults to 0 and k to the largest fold id plus one.
/// Example indices must cover `0..n` exactly once.
pub fn parse_fold_csv(text: &str) -> Result<FoldAssignment, SplitError> {
    let mut seed = 0u64;
    let mut k: Option<usize> = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some(v) = body.strip_prefix("seed=") {
            seed = v.trim().parse().map_err(|_| SplitError::BadFoldFile {
                line: 1,
                message: format!("bad seed value `{v}`"),
            })?;
        } else if let Some(v) = body.strip_prefix("k=") {
            k = Some(v.trim().parse().map_err(|_| SplitError::BadFoldFile {
                line: 2,
                message: format!("bad k value `{v}`"),
            })?);
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    {
        let headers = reader.headers().map_err(|e| SplitError::BadFoldFile {
            line: 0,
            message: e.to_string(),
        })?;
        if headers.iter().collect::<Vec<_>>() != ["example_index", "fold"] {
            return Err(SplitError::BadFoldFile {
                line: 0,
                message: format!(
                    "expected header `example_index,fold`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
    }
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (lineno, record) in reader.records().enumerate() {
        let line = lineno + 1;
        let record = record.map_err(|e| SplitError::BadFoldFile {
            line,
            message: e.to_string(),
        })?;
        let parse = |field: usize, name: &str| -> Result<usize, SplitError> {
            record
                .get(field)
                .and_then(|v| v.trim().parse::<usize>().ok())
                .ok_or_else(|| SplitError::BadFoldFile {
                    line,
                    message: format!("bad {name} value"),
                })
        };
        pairs.push((parse(0, "example_index")?, parse(1, "fold")?));
    }
    let n = pairs.len();
    let mut fold_of = vec![usize::MAX; n];
    for &(i, f) in &pairs {
        if i >= n || fold_of[i] != usize::MAX {
            return Err(SplitError::BadFoldFile {
                line: 0,
                message: format!("example indices must cover 0..{n} exactly once"),
            });
        }
        fold_of[i] = f;
    }
    let k = k.unwrap_or_else(|| fold_of.iter().max().map_or(1, |&m| m + 1));
    FoldAssignment::new(k, seed, fold_of)
}
