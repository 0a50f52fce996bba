//! Tabular classification datasets: loading, stratified splitting, CV folds
//! and discretized views for the information-theoretic measures.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of bins used when discretizing continuous features for MI.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Arff,
}

impl DataFormat {
    /// Guess the format from the file extension; anything but `.arff` is csv.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("arff") => DataFormat::Arff,
            _ => DataFormat::Csv,
        }
    }
}

/// Feature matrix (S rows x n columns) with a label-encoded class target.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    features: Array2<f64>,
    target: Vec<usize>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

impl TabularDataset {
    /// Build a dataset from parts. `class_names` fixes `n_classes`.
    pub fn new(
        features: Array2<f64>,
        target: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (rows, cols) = features.dim();
        if rows != target.len() {
            return Err(Error::LengthMismatch {
                left: rows,
                right: target.len(),
            });
        }
        if cols == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one feature".into()));
        }
        if feature_names.len() != cols {
            return Err(Error::LengthMismatch {
                left: cols,
                right: feature_names.len(),
            });
        }
        if class_names.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= class_names.len()) {
            return Err(Error::InvalidArgument(format!(
                "target code {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            target,
            feature_names,
            class_names,
        })
    }

    /// Convenience constructor with generated names (`f0..`, `c0..`).
    pub fn from_parts(features: Array2<f64>, target: Vec<usize>) -> Result<Self> {
        let n_classes = target.iter().max().map_or(1, |m| m + 1);
        let names = (0..features.ncols()).map(|j| format!("f{j}")).collect();
        let classes = (0..n_classes).map(|c| format!("c{c}")).collect();
        Self::new(features, target, names, classes)
    }

    pub fn n_samples(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.features.column(j)
    }

    /// Target codes as reals, for correlation with features.
    pub fn target_as_f64(&self) -> Vec<f64> {
        self.target.iter().map(|&t| t as f64).collect()
    }

    /// Rows in the given order. The class dictionary is kept so codes stay valid.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &t in &self.target {
            counts[t] += 1;
        }
        counts
    }

    fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.n_classes()];
        for (row, &t) in self.target.iter().enumerate() {
            by_class[t].push(row);
        }
        by_class
    }
}

/// Load a dataset. For csv the last column is the target; for arff the
/// attribute named `class` (any case) is the target, else the last attribute.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<TabularDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| load_err(path, e.to_string()))?;
    let parsed = match format {
        DataFormat::Csv => parse_csv(&text),
        DataFormat::Arff => parse_arff(&text),
    }
    .map_err(|reason| load_err(path, reason))?;
    parsed.into_dataset().map_err(|e| load_err(path, e.to_string()))
}

fn load_err(path: &Path, reason: String) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason,
    }
}

struct RawTable {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl RawTable {
    fn into_dataset(self) -> Result<TabularDataset> {
        if self.rows.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 rows, found {}",
                self.rows.len()
            )));
        }
        let n = self.feature_names.len();
        let mut class_names: Vec<String> = Vec::new();
        let mut codes: HashMap<String, usize> = HashMap::new();
        let target = self
            .labels
            .into_iter()
            .map(|label| {
                *codes.entry(label.clone()).or_insert_with(|| {
                    class_names.push(label);
                    class_names.len() - 1
                })
            })
            .collect();
        let flat: Vec<f64> = self.rows.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((flat.len() / n, n), flat)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        TabularDataset::new(features, target, self.feature_names, class_names)
    }
}

fn parse_csv(text: &str) -> std::result::Result<RawTable, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err("empty file or missing header row".into());
    }
    if headers.len() < 2 {
        return Err("need at least one feature column and a target column".into());
    }
    let n = headers.len() - 1;
    let feature_names = headers.iter().take(n).map(str::to_owned).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.len() != n + 1 {
            return Err(format!(
                "data row {} has {} fields, expected {}",
                line + 1,
                record.len(),
                n + 1
            ));
        }
        let mut row = Vec::with_capacity(n);
        for (j, cell) in record.iter().take(n).enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                format!(
                    "non-numeric value {cell:?} in column {:?} (data row {})",
                    &headers[j],
                    line + 1
                )
            })?;
            row.push(v);
        }
        let label = &record[n];
        if label.is_empty() {
            return Err(format!("missing target in data row {}", line + 1));
        }
        rows.push(row);
        labels.push(label.to_owned());
    }
    Ok(RawTable {
        feature_names,
        rows,
        labels,
    })
}

enum ArffType {
    Numeric,
    Nominal(Vec<String>),
}

struct ArffAttribute {
    name: String,
    kind: ArffType,
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2
        && ((s.starts_with('\'') && s.ends_with('\'')) || (s.starts_with('"') && s.ends_with('"')))
    {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

/// Split on commas outside of quotes.
fn split_arff_values(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    for ch in line.chars() {
        match (quote, ch) {
            (None, '\'' | '"') => {
                quote = Some(ch);
                cur.push(ch);
            }
            (Some(q), c) if c == q => {
                quote = None;
                cur.push(ch);
            }
            (None, ',') => out.push(std::mem::take(&mut cur)),
            _ => cur.push(ch),
        }
    }
    out.push(cur);
    out.into_iter().map(|v| unquote(&v).to_owned()).collect()
}

fn parse_attribute(rest: &str) -> std::result::Result<ArffAttribute, String> {
    let rest = rest.trim();
    let (name, kind) = if let Some(stripped) = rest.strip_prefix(['\'', '"']) {
        let q = rest.chars().next().unwrap();
        let end = stripped
            .find(q)
            .ok_or_else(|| format!("unterminated attribute name in {rest:?}"))?;
        (stripped[..end].to_owned(), stripped[end + 1..].trim())
    } else {
        let end = rest
            .find(char::is_whitespace)
            .ok_or_else(|| format!("attribute without type: {rest:?}"))?;
        (rest[..end].to_owned(), rest[end..].trim())
    };
    let kind = if kind.starts_with('{') {
        let inner = kind
            .strip_prefix('{')
            .and_then(|k| k.strip_suffix('}'))
            .ok_or_else(|| format!("malformed nominal type for {name}"))?;
        ArffType::Nominal(split_arff_values(inner))
    } else {
        match kind.to_ascii_lowercase().as_str() {
            "numeric" | "real" | "integer" => ArffType::Numeric,
            other => return Err(format!("unsupported attribute type {other:?} for {name}")),
        }
    };
    Ok(ArffAttribute { name, kind })
}

fn parse_arff(text: &str) -> std::result::Result<RawTable, String> {
    let mut attributes = Vec::new();
    let mut in_data = false;
    let mut data_lines = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if in_data {
            data_lines.push(line);
            continue;
        }
        let lower = line.to_ascii_lowercase();
        if lower.starts_with("@relation") {
            continue;
        } else if lower.starts_with("@attribute") {
            attributes.push(parse_attribute(&line["@attribute".len()..])?);
        } else if lower.starts_with("@data") {
            in_data = true;
        } else {
            return Err(format!("unexpected header line {line:?}"));
        }
    }
    if !in_data {
        return Err("missing @data section".into());
    }
    if attributes.len() < 2 {
        return Err("need at least one feature attribute and a class attribute".into());
    }
    let class_idx = attributes
        .iter()
        .position(|a| a.name.eq_ignore_ascii_case("class"))
        .unwrap_or(attributes.len() - 1);
    let feature_names = attributes
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != class_idx)
        .map(|(_, a)| a.name.clone())
        .collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line_no, line) in data_lines.into_iter().enumerate() {
        if line.starts_with('{') {
            return Err("sparse arff data is not supported".into());
        }
        let values = split_arff_values(line);
        if values.len() != attributes.len() {
            return Err(format!(
                "data row {} has {} values, expected {}",
                line_no + 1,
                values.len(),
                attributes.len()
            ));
        }
        let mut row = Vec::with_capacity(attributes.len() - 1);
        for (j, (value, attr)) in values.iter().zip(&attributes).enumerate() {
            if value == "?" {
                return Err(format!("missing value for {} in data row {}", attr.name, line_no + 1));
            }
            if j == class_idx {
                labels.push(value.clone());
                continue;
            }
            let v = match &attr.kind {
                ArffType::Numeric => value.parse::<f64>().map_err(|_| {
                    format!(
                        "non-numeric value {value:?} for {} in data row {}",
                        attr.name,
                        line_no + 1
                    )
                })?,
                ArffType::Nominal(levels) => levels.iter().position(|l| l == value).ok_or_else(
                    || format!("undeclared nominal value {value:?} for {}", attr.name),
                )? as f64,
            };
            row.push(v);
        }
        rows.push(row);
    }
    Ok(RawTable {
        feature_names,
        rows,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

/// Stratified, seeded train/test partition. The train part gets
/// `round(S * fraction)` rows; each class contributes `floor(c * fraction)`
/// rows, and the remainder goes to the classes with the largest fractional
/// parts (lowest class code first on ties).
pub fn split_train_test(
    d: &TabularDataset,
    spec: &SplitSpec,
) -> Result<(TabularDataset, TabularDataset)> {
    let (train, test) = split_indices(d, spec)?;
    Ok((d.select_rows(&train), d.select_rows(&test)))
}

/// Row indices of the stratified split, both sorted ascending.
pub fn split_indices(d: &TabularDataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let frac = spec.train_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Split(format!("train_fraction {frac} not in (0, 1)")));
    }
    let s = d.n_samples();
    let total = (s as f64 * frac).round() as usize;
    if total == 0 || total >= s {
        return Err(Error::Split(format!(
            "fraction {frac} on {s} rows leaves an empty part"
        )));
    }
    let counts = d.class_counts();
    let mut take: Vec<usize> = counts
        .iter()
        .map(|&c| (c as f64 * frac).floor() as usize)
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let remainder = |c: usize| counts[c] as f64 * frac - take[c] as f64;
    order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
    let mut missing = total.saturating_sub(take.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if take[c] < counts[c] {
            take[c] += 1;
            missing -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::with_capacity(total);
    let mut test = Vec::with_capacity(s - total);
    for (class, mut rows) in d.rows_by_class().into_iter().enumerate() {
        rows.shuffle(&mut rng);
        train.extend_from_slice(&rows[..take[class]]);
        test.extend_from_slice(&rows[take[class]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of_row: Vec<usize>,
    pub n_folds: usize,
}

impl FoldAssignment {
    /// Rows outside / inside fold `f`.
    pub fn train_test(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (inside, outside): (Vec<usize>, Vec<usize>) =
            (0..self.fold_of_row.len()).partition(|&r| self.fold_of_row[r] == f);
        (outside, inside)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.fold_of_row {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified fold assignment: rows are shuffled within each class, the
/// classes are concatenated and folds are dealt round-robin.
pub fn make_folds(d: &TabularDataset, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("n_folds must be >= 2, got {n_folds}")));
    }
    if n_folds > d.n_samples() {
        return Err(Error::InvalidArgument(format!(
            "n_folds {n_folds} exceeds {} rows",
            d.n_samples()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_row = vec![0; d.n_samples()];
    let mut position = 0;
    for mut rows in d.rows_by_class() {
        rows.shuffle(&mut rng);
        for r in rows {
            fold_of_row[r] = position % n_folds;
            position += 1;
        }
    }
    Ok(FoldAssignment {
        fold_of_row,
        n_folds,
    })
}

/// Discretize one column into codes in `[0, n_bins)`.
///
/// Integer-valued columns with at most `n_bins` distinct values are mapped to
/// the rank of each distinct value, which leaves `0..k` codes unchanged.
/// Other columns use equal-frequency bins: edge `b` is the order statistic at
/// position `floor(b * S / n_bins)` and a value's bin is the number of distinct
/// edges above the column minimum that it reaches.
pub fn discretize_column(column: ArrayView1<'_, f64>, n_bins: usize) -> Vec<usize> {
    let mut sorted: Vec<f64> = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();

    let integer_valued = sorted.iter().all(|v| v.fract() == 0.0);
    if integer_valued && distinct.len() <= n_bins {
        return column
            .iter()
            .map(|v| distinct.partition_point(|d| d < v))
            .collect();
    }

    let s = sorted.len();
    let min = sorted[0];
    let mut edges: Vec<f64> = (1..n_bins).map(|b| sorted[b * s / n_bins]).collect();
    edges.dedup();
    edges.retain(|&e| e > min);
    column
        .iter()
        .map(|v| edges.partition_point(|e| e <= v))
        .collect()
}

/// Discretize every feature column; output is S x n.
pub fn discretize_columns(d: &TabularDataset, n_bins: usize) -> Result<Array2<usize>> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let mut out = Array2::zeros((d.n_samples(), d.n_features()));
    for j in 0..d.n_features() {
        let codes = discretize_column(d.column(j), n_bins);
        for (r, c) in codes.into_iter().enumerate() {
            out[[r, j]] = c;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn toy(target: Vec<usize>) -> TabularDataset {
        let rows = target.len();
        let feats = Array2::from_shape_fn((rows, 2), |(r, c)| (r * 2 + c) as f64);
        TabularDataset::from_parts(feats, target).unwrap()
    }

    fn write_tmp(contents: &str, suffix: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(suffix).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_label_encoding_is_first_appearance() {
        let f = write_tmp("a,b,y\n1,2,dog\n3,4,cat\n5,6,dog\n", ".csv");
        let d = load_dataset(f.path(), DataFormat::Csv).unwrap();
        assert_eq!(d.n_samples(), 3);
        assert_eq!(d.n_features(), 2);
        assert_eq!(d.target(), &[0, 1, 0]);
        assert_eq!(d.class_names(), &["dog".to_string(), "cat".to_string()]);
    }

    #[test]
    fn empty_file_is_a_load_error() {
        let f = write_tmp("", ".csv");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Csv),
            Err(Error::Load { .. })
        ));
        let f = write_tmp("", ".arff");
        assert!(load_dataset(f.path(), DataFormat::Arff).is_err());
    }

    #[test]
    fn non_numeric_cell_is_reported() {
        let f = write_tmp("a,y\n1,x\nfoo,y\n", ".csv");
        let err = load_dataset(f.path(), DataFormat::Csv).unwrap_err().to_string();
        assert!(err.contains("non-numeric"), "{err}");
    }

    #[test]
    fn header_only_csv_is_rejected() {
        let f = write_tmp("a,y\n", ".csv");
        assert!(load_dataset(f.path(), DataFormat::Csv).is_err());
        let f = write_tmp("y\n1\n2\n", ".csv");
        assert!(load_dataset(f.path(), DataFormat::Csv).is_err());
    }

    #[test]
    fn arff_with_nominal_feature_and_class() {
        let text = "% comment\n@RELATION t\n@ATTRIBUTE 'x a' REAL\n@ATTRIBUTE color {red, 'dark blue'}\n\
                    @ATTRIBUTE class {no,yes}\n@DATA\n1.5,red,yes\n2,'dark blue',no\n";
        let f = write_tmp(text, ".arff");
        let d = load_dataset(f.path(), DataFormat::Arff).unwrap();
        assert_eq!(d.feature_names(), &["x a".to_string(), "color".to_string()]);
        assert_eq!(d.features(), &array![[1.5, 0.0], [2.0, 1.0]]);
        assert_eq!(d.target(), &[0, 1]);
        assert_eq!(d.class_names()[0], "yes");
    }

    #[test]
    fn arff_missing_value_is_rejected() {
        let text = "@relation t\n@attribute a numeric\n@attribute class {p,q}\n@data\n?,p\n1,q\n";
        let f = write_tmp(text, ".arff");
        assert!(load_dataset(f.path(), DataFormat::Arff).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let target: Vec<usize> = (0..150).map(|i| i / 50).collect();
        let d = toy(target);
        let spec = SplitSpec {
            train_fraction: 0.7,
            seed: 3,
        };
        let (tr, te) = split_indices(&d, &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (105, 45));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..150).collect::<Vec<_>>());
        assert_eq!(split_indices(&d, &spec).unwrap(), (tr, te));
    }

    #[test]
    fn extreme_fraction_errors() {
        let mut target = vec![0; 9];
        target.push(1);
        let d = toy(target);
        let spec = SplitSpec {
            train_fraction: 0.999,
            seed: 0,
        };
        assert!(matches!(split_train_test(&d, &spec), Err(Error::Split(_))));
        let spec = SplitSpec {
            train_fraction: 1.0,
            seed: 0,
        };
        assert!(split_train_test(&d, &spec).is_err());
    }

    #[test]
    fn folds_balanced() {
        let target: Vec<usize> = (0..105).map(|i| i % 3).collect();
        let d = toy(target);
        let folds = make_folds(&d, 5, 9).unwrap();
        assert_eq!(folds.fold_sizes(), vec![21; 5]);
        let loo = make_folds(&d, 105, 9).unwrap();
        assert!(loo.fold_sizes().iter().all(|&s| s == 1));
        assert!(make_folds(&d, 1, 9).is_err());
        assert!(make_folds(&d, 106, 9).is_err());
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize_column(array![1.0, 2.0, 3.0, 4.0].view(), 2), vec![0, 0, 1, 1]);
        assert_eq!(discretize_column(array![2.5, 2.5, 2.5].view(), 4), vec![0, 0, 0]);
        assert_eq!(discretize_column(array![7.3, 7.3].view(), 4), vec![0, 0]);
        let binary = array![0.0, 1.0, 1.0, 0.0, 1.0];
        assert_eq!(discretize_column(binary.view(), 10), vec![0, 1, 1, 0, 1]);
        let d = toy(vec![0, 1]);
        assert!(discretize_columns(&d, 1).is_err());
    }
}
