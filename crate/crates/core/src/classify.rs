//! Random forest (bagged Gini CART trees) and the evaluation protocol used to
//! score a feature selection: k-fold CV on the training part and repeated
//! test-set accuracy.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_train_test, FoldAssignment, SplitSpec, TabularDataset};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::qubo::SelectionMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeaturesPerSplit {
    /// `max(1, floor(sqrt(m)))` of the m selected features.
    Sqrt,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART tree over the columns of the masked feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    fn predict_row(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(class) => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    n_classes: usize,
    cfg: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl TreeBuilder<'_> {
    fn majority(&self, rows: &[usize]) -> (usize, bool) {
        let mut counts = vec![0usize; self.n_classes];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        let best = argmax_counts(&counts);
        let pure = counts[best] == rows.len();
        (best, pure)
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let m = self.x.ncols();
        let mut order: Vec<usize> = (0..m).collect();
        if self.cfg.features_per_split == FeaturesPerSplit::Sqrt {
            order.shuffle(&mut self.rng);
        }
        order
    }

    /// Best split of `rows` on `feature`: thresholds are midpoints between
    /// consecutive distinct values; impurity is the size-weighted Gini.
    fn best_split_on(&self, rows: &mut [usize], feature: usize) -> Option<SplitChoice> {
        let x = self.x;
        rows.sort_unstable_by(|&a, &b| x[[a, feature]].total_cmp(&x[[b, feature]]));
        let n = rows.len();
        let mut total = vec![0.0f64; self.n_classes];
        for &r in rows.iter() {
            total[self.y[r]] += 1.0;
        }
        let mut left = vec![0.0f64; self.n_classes];
        let mut best: Option<SplitChoice> = None;
        for i in 0..n - 1 {
            left[self.y[rows[i]]] += 1.0;
            let (v, next) = (x[[rows[i], feature]], x[[rows[i + 1], feature]]);
            if v == next {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            let (mut sl, mut sr) = (0.0, 0.0);
            for c in 0..self.n_classes {
                sl += left[c] * left[c];
                let rc = total[c] - left[c];
                sr += rc * rc;
            }
            let impurity = (nl - sl / nl) + (nr - sr / nr);
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let mut threshold = 0.5 * (v + next);
                if threshold >= next {
                    threshold = v;
                }
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }

    fn build(&mut self, mut rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let (majority, pure) = self.majority(&rows);
        self.nodes.push(Node::Leaf(majority));
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || rows.len() < self.cfg.min_samples_split.max(2) || depth_capped {
            return id;
        }

        let wanted = match self.cfg.features_per_split {
            FeaturesPerSplit::All => self.x.ncols(),
            FeaturesPerSplit::Sqrt => ((self.x.ncols() as f64).sqrt().floor() as usize).max(1),
        };
        let order = self.candidate_features();
        let mut best: Option<SplitChoice> = None;
        // Draw `wanted` features; keep drawing while none of them can split.
        for chunk_start in (0..order.len()).step_by(wanted) {
            let mut chunk: Vec<usize> = order[chunk_start..(chunk_start + wanted).min(order.len())].to_vec();
            chunk.sort_unstable();
            for f in chunk {
                if let Some(s) = self.best_split_on(&mut rows, f) {
                    if best.as_ref().is_none_or(|b| s.impurity < b.impurity) {
                        best = Some(s);
                    }
                }
            }
            if best.is_some() {
                break;
            }
        }
        let Some(split) = best else { return id };

        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&row| self.x[[row, split.feature]] <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn argmax_counts(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in counts.iter().enumerate() {
        if v > counts[best] {
            best = c;
        }
    }
    best
}

/// Bagged CART trees over the columns selected by a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    mask: SelectionMask,
    n_classes: usize,
}

impl RandomForest {
    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn mask(&self) -> &SelectionMask {
        &self.mask
    }

    /// Majority vote over trees, lowest class on ties.
    pub fn predict(&self, d: &TabularDataset, mask: &SelectionMask) -> Result<Vec<usize>> {
        if mask.bits != self.mask.bits {
            return Err(Error::InvalidArgument("mask differs from the training mask".into()));
        }
        let x = masked_features(d, mask)?;
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                let row = row.to_vec();
                let mut votes = vec![0usize; self.n_classes];
                for t in &self.trees {
                    votes[t.predict_row(&row)] += 1;
                }
                argmax_counts(&votes)
            })
            .collect())
    }
}

fn masked_features(d: &TabularDataset, mask: &SelectionMask) -> Result<Array2<f64>> {
    if mask.len() != d.n_features() {
        return Err(Error::Dimension {
            expected: d.n_features(),
            actual: mask.len(),
        });
    }
    let selected = mask.selected();
    if selected.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(d.features().select(ndarray::Axis(1), &selected))
}

pub fn train_forest(
    train: &TabularDataset,
    mask: &SelectionMask,
    cfg: &ForestConfig,
) -> Result<RandomForest> {
    if cfg.n_trees < 1 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    let x = masked_features(train, mask)?;
    let y = train.target();
    let s = train.n_samples();
    if s == 0 {
        return Err(Error::Empty("training set"));
    }
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, t as u64));
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..s).map(|_| rng.gen_range(0..s)).collect()
            } else {
                (0..s).collect()
            };
            let mut builder = TreeBuilder {
                x: &x,
                y,
                n_classes: train.n_classes(),
                cfg,
                rng,
                nodes: Vec::new(),
            };
            builder.build(rows, 0);
            DecisionTree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Ok(RandomForest {
        trees,
        mask: mask.clone(),
        n_classes: train.n_classes(),
    })
}

/// Fraction of correctly predicted test rows.
pub fn accuracy(model: &RandomForest, test: &TabularDataset, mask: &SelectionMask) -> Result<f64> {
    if test.n_samples() == 0 {
        return Err(Error::Empty("test set"));
    }
    let predictions = model.predict(test, mask)?;
    let hits = predictions
        .iter()
        .zip(test.target())
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / test.n_samples() as f64)
}

/// Mean held-out accuracy over the folds; fold f trains with seed
/// `derive_seed(cfg.seed, f)`.
pub fn cv_score(
    train: &TabularDataset,
    mask: &SelectionMask,
    folds: &FoldAssignment,
    cfg: &ForestConfig,
) -> Result<f64> {
    if folds.fold_of_row.len() != train.n_samples() {
        return Err(Error::LengthMismatch {
            left: folds.fold_of_row.len(),
            right: train.n_samples(),
        });
    }
    let mut total = 0.0;
    for f in 0..folds.n_folds {
        let (fit_rows, held_rows) = folds.train_test(f);
        if fit_rows.is_empty() || held_rows.is_empty() {
            return Err(Error::InvalidArgument(format!("fold {f} leaves an empty part")));
        }
        let fold_cfg = ForestConfig {
            seed: derive_seed(cfg.seed, f as u64),
            ..*cfg
        };
        let model = train_forest(&train.select_rows(&fit_rows), mask, &fold_cfg)?;
        total += accuracy(&model, &train.select_rows(&held_rows), mask)?;
    }
    Ok(total / folds.n_folds as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub mean_accuracy: f64,
    /// Population standard deviation of `per_repeat`.
    pub std_accuracy: f64,
    pub per_repeat: Vec<f64>,
    pub mask: SelectionMask,
}

impl EvaluationReport {
    pub fn from_runs(per_repeat: Vec<f64>, mask: SelectionMask) -> Self {
        let (mean, std) = mean_std(&per_repeat);
        Self {
            mean_accuracy: mean,
            std_accuracy: std,
            per_repeat,
            mask,
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Split once, then train `repeats` forests (seed `derive_seed(cfg.seed, r)`)
/// and score each on the test part.
pub fn evaluate_selection(
    d: &TabularDataset,
    mask: &SelectionMask,
    split: &SplitSpec,
    repeats: usize,
    cfg: &ForestConfig,
) -> Result<EvaluationReport> {
    let (train, test) = split_train_test(d, split)?;
    evaluate_on_split(&train, &test, mask, repeats, cfg)
}

pub fn evaluate_on_split(
    train: &TabularDataset,
    test: &TabularDataset,
    mask: &SelectionMask,
    repeats: usize,
    cfg: &ForestConfig,
) -> Result<EvaluationReport> {
    if repeats < 1 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let per_repeat = (0..repeats)
        .map(|r| {
            let run_cfg = ForestConfig {
                seed: derive_seed(cfg.seed, r as u64),
                ..*cfg
            };
            let model = train_forest(train, mask, &run_cfg)?;
            accuracy(&model, test, mask)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvaluationReport::from_runs(per_repeat, mask.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_folds;
    use ndarray::{array, Array2};

    fn single_tree() -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            features_per_split: FeaturesPerSplit::All,
            bootstrap: false,
            ..Default::default()
        }
    }

    fn ds(x: Array2<f64>, y: Vec<usize>, n_classes: usize) -> TabularDataset {
        let names = (0..x.ncols()).map(|j| format!("f{j}")).collect();
        let classes = (0..n_classes).map(|c| format!("c{c}")).collect();
        TabularDataset::new(x, y, names, classes).unwrap()
    }

    #[test]
    fn separable_threshold_is_learned() {
        let x = Array2::from_shape_fn((40, 2), |(r, c)| if c == 0 { r as f64 } else { (r * 7 % 5) as f64 });
        let y: Vec<usize> = (0..40).map(|r| usize::from(r >= 17)).collect();
        let d = ds(x, y, 2);
        let mask = SelectionMask::new(vec![true, true]);
        let model = train_forest(&d, &mask, &ForestConfig::default()).unwrap();
        assert_eq!(accuracy(&model, &d, &mask).unwrap(), 1.0);
    }

    #[test]
    fn depth_one_stump() {
        let x = array![[0.0], [1.0], [0.0], [1.0], [1.0]];
        let d = ds(x, vec![0, 1, 0, 1, 1], 2);
        let mask = SelectionMask::new(vec![true]);
        let cfg = ForestConfig {
            max_depth: Some(1),
            ..single_tree()
        };
        let model = train_forest(&d, &mask, &cfg).unwrap();
        assert_eq!(model.trees()[0].depth(), 1);
        assert_eq!(accuracy(&model, &d, &mask).unwrap(), 1.0);
    }

    #[test]
    fn mask_errors() {
        let d = ds(array![[0.0, 1.0], [1.0, 0.0]], vec![0, 1], 2);
        assert!(matches!(
            train_forest(&d, &SelectionMask::zeros(2), &ForestConfig::default()),
            Err(Error::EmptyMask)
        ));
        let m1 = SelectionMask::new(vec![true, false]);
        let model = train_forest(&d, &m1, &single_tree()).unwrap();
        assert!(accuracy(&model, &d, &SelectionMask::new(vec![false, true])).is_err());
        let empty = d.select_rows(&[]);
        assert!(accuracy(&model, &empty, &m1).is_err());
    }

    #[test]
    fn known_fraction_on_hand_built_test() {
        let train = ds(array![[0.0], [0.0], [1.0], [1.0]], vec![0, 0, 1, 1], 2);
        let mask = SelectionMask::new(vec![true]);
        let model = train_forest(&train, &mask, &single_tree()).unwrap();
        // The tree predicts y = x; three of the ten labels disagree.
        let x = Array2::from_shape_fn((10, 1), |(r, _)| (r % 2) as f64);
        let y = vec![0, 1, 0, 1, 0, 1, 1, 0, 1, 1];
        assert_eq!(accuracy(&model, &ds(x, y, 2), &mask).unwrap(), 0.7);

        let single = ds(array![[5.0], [6.0]], vec![0, 0], 2);
        let majority = train_forest(&single, &mask, &single_tree()).unwrap();
        assert_eq!(accuracy(&majority, &single, &mask).unwrap(), 1.0);
    }

    #[test]
    fn two_fold_hand_trace() {
        let x = array![[0.0], [0.0], [0.0], [0.0], [1.0], [1.0], [1.0], [1.0]];
        let d = ds(x, vec![0, 0, 0, 0, 1, 1, 0, 1], 2);
        let folds = FoldAssignment {
            fold_of_row: vec![0, 0, 1, 1, 0, 0, 1, 1],
            n_folds: 2,
        };
        // fold 0 trains on rows {2,3,6,7}: the x = 1 leaf ties 1:1 and votes 0,
        // so held-out {0,1,4,5} scores 2/4. Fold 1 learns y = x and scores 3/4.
        let mask = SelectionMask::new(vec![true]);
        let score = cv_score(&d, &mask, &folds, &single_tree()).unwrap();
        assert_eq!(score, (0.5 + 0.75) / 2.0);
    }

    #[test]
    fn constant_target_and_chance_level() {
        let x = Array2::from_shape_fn((30, 2), |(r, c)| (r * (c + 3) % 7) as f64);
        let d = ds(x, vec![1; 30], 2);
        let mask = SelectionMask::new(vec![true, true]);
        let folds = make_folds(&d, 5, 0).unwrap();
        assert_eq!(cv_score(&d, &mask, &folds, &ForestConfig::default()).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Array2::from_shape_fn((600, 3), |_| rng.gen::<f64>());
        let y: Vec<usize> = (0..600).map(|_| rng.gen_range(0..2)).collect();
        let d = ds(x, y, 2);
        let folds = make_folds(&d, 5, 1).unwrap();
        let cfg = ForestConfig {
            n_trees: 25,
            ..Default::default()
        };
        let score = cv_score(&d, &SelectionMask::new(vec![true; 3]), &folds, &cfg).unwrap();
        assert!((score - 0.5).abs() <= 0.1, "{score}");
    }

    #[test]
    fn duplicated_column_leaves_single_tree_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Array2::from_shape_fn((60, 2), |_| (rng.gen_range(0..6)) as f64);
        let y: Vec<usize> = (0..60).map(|r| usize::from(base[[r, 0]] + base[[r, 1]] > 5.0) ^ usize::from(r % 9 == 0)).collect();
        let dup = ndarray::concatenate![ndarray::Axis(1), base, base.column(0).insert_axis(ndarray::Axis(1))];
        let d1 = ds(base, y.clone(), 2);
        let d2 = ds(dup, y, 2);
        let m1 = SelectionMask::new(vec![true, true]);
        let m2 = SelectionMask::new(vec![true, true, true]);
        let p1 = train_forest(&d1, &m1, &single_tree()).unwrap().predict(&d1, &m1).unwrap();
        let p2 = train_forest(&d2, &m2, &single_tree()).unwrap().predict(&d2, &m2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn evaluation_report_statistics() {
        let x = Array2::from_shape_fn((40, 1), |(r, _)| if r < 20 { r as f64 } else { r as f64 + 100.0 });
        let y: Vec<usize> = (0..40).map(|r| usize::from(r >= 20)).collect();
        let d = ds(x, y, 2);
        let mask = SelectionMask::new(vec![true]);
        let split = SplitSpec::default();
        let one = evaluate_selection(&d, &mask, &split, 1, &ForestConfig::default()).unwrap();
        assert_eq!(one.std_accuracy, 0.0);
        assert_eq!(one.mean_accuracy, one.per_repeat[0]);
        let five = evaluate_selection(&d, &mask, &split, 5, &ForestConfig::default()).unwrap();
        assert_eq!((five.mean_accuracy, five.std_accuracy), (1.0, 0.0));
        assert_eq!(five, evaluate_selection(&d, &mask, &split, 5, &ForestConfig::default()).unwrap());
        assert!(evaluate_selection(&d, &mask, &split, 0, &ForestConfig::default()).is_err());
    }

    #[test]
    fn mean_std_matches_definition() {
        let (m, s) = mean_std(&[0.9, 0.95, 1.0]);
        assert!((m - 0.95).abs() < 1e-15);
        assert!((s - (0.005f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
