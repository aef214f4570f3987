//! Domain-incremental data: seeded synthetic drift generators plus CSV
//! ingestion.
//!
//! The temporal generator emulates family emergence/persistence: Gaussian
//! clusters per class, with new clusters born in rotated directions at each
//! domain while legacy clusters keep their parameters (or retire on a
//! schedule). The representation generator passes one fixed labeled source
//! through progressively lossier views: coordinate masking to a sentinel,
//! quantization, and additive noise, with a reduced sample budget at the
//! final level.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

// Substream ids for the generator so content is independent of call order.
const STREAM_CLUSTERS: u64 = 1;
const STREAM_SPLITS: u64 = 2;
const STREAM_DEGRADE: u64 = 3;
fn domain_stream(domain: usize) -> u64 {
    100 + domain as u64
}

/// One labeled domain with disjoint train/valid/test index sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Owned view of one split (features plus labels).
#[derive(Debug, Clone)]
pub struct SplitView {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
}

impl SplitView {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

impl DomainDataset {
    fn view(&self, idx: &[usize]) -> SplitView {
        SplitView {
            xs: idx.iter().map(|&i| self.features[i].clone()).collect(),
            ys: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn train(&self) -> SplitView {
        self.view(&self.train_idx)
    }

    pub fn valid(&self) -> SplitView {
        self.view(&self.valid_idx)
    }

    pub fn test(&self) -> SplitView {
        self.view(&self.test_idx)
    }

    /// Train ∪ valid, the pool mask training samples from.
    pub fn train_valid(&self) -> SplitView {
        let mut v = self.train();
        let mut w = self.valid();
        v.xs.append(&mut w.xs);
        v.ys.append(&mut w.ys);
        v
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map(|f| f.len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    #[default]
    Temporal,
    Representation,
}

/// Ordered sequence of domain datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskStream {
    pub kind: StreamKind,
    pub domains: Vec<DomainDataset>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.domains.first().map(|d| d.feature_dim()).unwrap_or(0)
    }
}

/// Per-domain sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }

    pub fn fractions(&self) -> [f64; 3] {
        let n = self.total() as f64;
        [
            self.train as f64 / n,
            self.valid as f64 / n,
            self.test as f64 / n,
        ]
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 2000,
            valid: 500,
            test: 1000,
        }
    }
}

/// Degradation schedule for the representation generator. Level 1 is always
/// undegraded; level R applies the `*_max` settings; intermediate levels
/// interpolate linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradeSpec {
    /// Fraction of coordinates replaced by the sentinel at the last level.
    pub mask_fraction_max: f64,
    /// Additive noise sigma at the last level.
    pub noise_max: f64,
    /// Quantization step at the last level (0 disables).
    pub quant_step_max: f64,
    pub sentinel: f64,
    /// Sample budget of the last level relative to the other levels.
    pub last_level_budget: f64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        DegradeSpec {
            mask_fraction_max: 0.8,
            noise_max: 1.6,
            quant_step_max: 1.2,
            sentinel: 0.0,
            last_level_budget: 0.12,
        }
    }
}

/// Generator specification shared by both stream kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSpec {
    pub domains: usize,
    pub feature_dim: usize,
    pub clusters_per_class: usize,
    /// Rotation of newly born cluster directions per domain step, radians.
    pub rotation_step_radians: f64,
    /// New clusters per class born at every domain after the first.
    pub births_per_domain: usize,
    /// Domains a cluster stays in the sampling mixture; `None` = persists
    /// forever (legacy families keep their parameters).
    pub cluster_lifetime: Option<usize>,
    /// Fraction of samples in class 1.
    pub imbalance: f64,
    /// Cluster standard deviation.
    pub noise_scale: f64,
    /// Extra within-cluster spread of newborn (birth ≥ 2) families along
    /// the tangential direction of the class plane. New families then vary
    /// widely along previously discriminative axes, which is what makes
    /// naive fine-tuning erode old decision boundaries.
    pub family_spread: f64,
    pub samples: SplitSizes,
    pub seed: u64,
    /// Present for representation streams.
    pub degradation: Option<DegradeSpec>,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            domains: 5,
            feature_dim: 20,
            clusters_per_class: 2,
            rotation_step_radians: 0.0,
            births_per_domain: 0,
            cluster_lifetime: None,
            imbalance: 0.5,
            noise_scale: 0.6,
            family_spread: 0.0,
            samples: SplitSizes::default(),
            seed: 7,
            degradation: None,
        }
    }
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 {
            return Err(Error::config("stream.domains", "must be at least 1"));
        }
        if self.feature_dim < 2 {
            return Err(Error::config("stream.feature_dim", "must be at least 2"));
        }
        if self.clusters_per_class == 0 {
            return Err(Error::config("stream.clusters_per_class", "must be at least 1"));
        }
        if !(self.imbalance > 0.0 && self.imbalance < 1.0) {
            return Err(Error::config("stream.imbalance", "must lie in (0, 1)"));
        }
        if !self.rotation_step_radians.is_finite() {
            return Err(Error::config("stream.rotation_step_radians", "must be finite"));
        }
        if self.samples.train == 0 || self.samples.valid == 0 || self.samples.test == 0 {
            return Err(Error::config("stream.samples", "every split must be nonempty"));
        }
        Ok(())
    }

    /// The committed 5-domain temporal stream used by the benchmark runs:
    /// strong per-domain family turnover in rotated directions with legacy
    /// clusters persisting for two domains.
    pub fn temporal_benchmark() -> Self {
        DriftSpec {
            domains: 5,
            feature_dim: 20,
            clusters_per_class: 2,
            rotation_step_radians: 70.0_f64.to_radians(),
            births_per_domain: 2,
            cluster_lifetime: Some(2),
            imbalance: 0.45,
            noise_scale: 0.55,
            family_spread: 1.8,
            samples: SplitSizes::default(),
            seed: 20140101,
            degradation: None,
        }
    }

    /// Committed adversarial 2-domain stream: disjoint clusters under a 90°
    /// rotation in d=2, so sequential fine-tuning forgets domain 1.
    pub fn two_domain_adversarial() -> Self {
        DriftSpec {
            domains: 2,
            feature_dim: 2,
            clusters_per_class: 1,
            rotation_step_radians: std::f64::consts::FRAC_PI_2,
            births_per_domain: 1,
            cluster_lifetime: Some(1),
            imbalance: 0.5,
            noise_scale: 0.35,
            family_spread: 1.4,
            samples: SplitSizes {
                train: 1200,
                valid: 300,
                test: 600,
            },
            seed: 424242,
            degradation: None,
        }
    }

    /// Committed 3-level representation-shift stream (full → anonymized →
    /// stripped analogue) with the smallest budget at the last level.
    pub fn representation_benchmark() -> Self {
        DriftSpec {
            domains: 3,
            feature_dim: 20,
            clusters_per_class: 2,
            rotation_step_radians: 0.0,
            births_per_domain: 0,
            cluster_lifetime: None,
            imbalance: 0.5,
            noise_scale: 0.6,
            family_spread: 0.0,
            samples: SplitSizes::default(),
            seed: 31337,
            degradation: Some(DegradeSpec::default()),
        }
    }
}

#[derive(Debug, Clone)]
struct Cluster {
    class: usize,
    birth: usize,
    mean: Vec<f64>,
    /// Unit tangent of the class plane at this cluster's angle; newborn
    /// families spread along it.
    tangent: Vec<f64>,
    spread: f64,
}

impl Cluster {
    fn active(&self, domain: usize, lifetime: Option<usize>) -> bool {
        if domain < self.birth {
            return false;
        }
        match lifetime {
            Some(l) => domain < self.birth + l,
            None => true,
        }
    }
}

const CLUSTER_RADIUS: f64 = 2.5;

/// Cluster mean: class direction in the (0,1) plane rotated by the domain
/// step angle, plus a fixed random offset in the remaining coordinates.
fn make_cluster(
    spec: &DriftSpec,
    class: usize,
    slot: usize,
    birth: usize,
    rng: &mut SeededRng,
) -> Cluster {
    let base_angle = class as f64 * std::f64::consts::PI
        + (slot as f64 - 0.5 * (spec.clusters_per_class.max(1) as f64 - 1.0)) * 0.45;
    let angle = base_angle + (birth as f64 - 1.0) * spec.rotation_step_radians;
    let mut mean = vec![0.0; spec.feature_dim];
    mean[0] = CLUSTER_RADIUS * angle.cos();
    mean[1] = CLUSTER_RADIUS * angle.sin();
    for m in mean.iter_mut().skip(2) {
        *m = 0.4 * rng.gaussian();
    }
    let mut tangent = vec![0.0; spec.feature_dim];
    tangent[0] = -angle.sin();
    tangent[1] = angle.cos();
    Cluster {
        class,
        birth,
        mean,
        tangent,
        spread: if birth >= 2 { spec.family_spread } else { 0.0 },
    }
}

fn build_clusters(spec: &DriftSpec) -> Vec<Cluster> {
    let mut rng = SeededRng::with_stream(spec.seed, STREAM_CLUSTERS);
    let mut clusters = Vec::new();
    for class in 0..2 {
        for slot in 0..spec.clusters_per_class {
            clusters.push(make_cluster(spec, class, slot, 1, &mut rng));
        }
    }
    for domain in 2..=spec.domains {
        for class in 0..2 {
            for slot in 0..spec.births_per_domain {
                clusters.push(make_cluster(spec, class, slot, domain, &mut rng));
            }
        }
    }
    clusters
}

/// Exact per-class counts from the imbalance ratio; class 1 is positive.
fn class_counts(n: usize, imbalance: f64) -> (usize, usize) {
    let pos = ((n as f64 * imbalance).round() as usize).clamp(1, n - 1);
    (n - pos, pos)
}

fn sample_domain(
    spec: &DriftSpec,
    clusters: &[Cluster],
    domain: usize,
    n_total: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rng = SeededRng::with_stream(spec.seed, domain_stream(domain));
    let (n0, n1) = class_counts(n_total, spec.imbalance);
    let mut features = Vec::with_capacity(n_total);
    let mut labels = Vec::with_capacity(n_total);
    for (class, count) in [(0usize, n0), (1usize, n1)] {
        let active: Vec<&Cluster> = clusters
            .iter()
            .filter(|c| c.class == class && c.active(domain, spec.cluster_lifetime))
            .collect();
        if active.is_empty() {
            return Err(Error::domain(format!(
                "infeasible schedule: class {class} has no active clusters at domain {domain}"
            )));
        }
        for i in 0..count {
            let cluster = active[i % active.len()];
            let along = cluster.spread * rng.gaussian();
            let x: Vec<f64> = cluster
                .mean
                .iter()
                .zip(cluster.tangent.iter())
                .map(|(&m, &t)| m + spec.noise_scale * rng.gaussian() + along * t)
                .collect();
            features.push(x);
            labels.push(class);
        }
    }
    Ok((features, labels))
}

/// Seeded split of `n` indices into train/valid/test by fractions; the same
/// (seed, domain, fractions, n) always produces the same index sets.
fn split_indices(
    n: usize,
    fractions: [f64; 3],
    seed: u64,
    domain: usize,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_valid = (fractions[1] * n as f64).round() as usize;
    if n_train + n_valid >= n {
        return Err(Error::domain(format!(
            "split fractions leave no test samples for n={n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::with_stream(seed, STREAM_SPLITS + domain_stream(domain));
    rng.shuffle(&mut idx);
    let train = idx[..n_train].to_vec();
    let valid = idx[n_train..n_train + n_valid].to_vec();
    let test = idx[n_train + n_valid..].to_vec();
    if train.is_empty() || valid.is_empty() || test.is_empty() {
        return Err(Error::domain("every split must be nonempty"));
    }
    Ok((train, valid, test))
}

/// Temporal drift: per-domain cluster mixtures with scheduled births and
/// retirements; deterministic per seed.
pub fn generate_temporal_stream(spec: &DriftSpec) -> Result<TaskStream> {
    spec.validate()?;
    let clusters = build_clusters(spec);
    let fractions = spec.samples.fractions();
    let mut domains = Vec::with_capacity(spec.domains);
    for domain in 1..=spec.domains {
        let (features, labels) = sample_domain(spec, &clusters, domain, spec.samples.total())?;
        let (train_idx, valid_idx, test_idx) =
            split_indices(features.len(), fractions, spec.seed, domain)?;
        domains.push(DomainDataset {
            domain_id: domain,
            features,
            labels,
            train_idx,
            valid_idx,
            test_idx,
        });
    }
    Ok(TaskStream {
        kind: StreamKind::Temporal,
        domains,
    })
}

fn degrade_level(
    spec: &DriftSpec,
    deg: &DegradeSpec,
    level: usize,
    levels: usize,
    xs: &mut [Vec<f64>],
) {
    if level <= 1 || levels <= 1 {
        return;
    }
    let t = (level - 1) as f64 / (levels - 1) as f64;
    let mask_fraction = t * deg.mask_fraction_max;
    let noise = t * deg.noise_max;
    let quant = t * deg.quant_step_max;

    let mut rng = SeededRng::with_stream(spec.seed, STREAM_DEGRADE + level as u64);
    // The masked coordinate set is fixed per level (the same fields vanish
    // for every sample, like stripped metadata).
    let mut coords: Vec<usize> = (0..spec.feature_dim).collect();
    rng.shuffle(&mut coords);
    let masked = (mask_fraction * spec.feature_dim as f64).ceil() as usize;
    let masked_coords = &coords[..masked.min(spec.feature_dim)];

    for x in xs.iter_mut() {
        for v in x.iter_mut() {
            if noise > 0.0 {
                *v += noise * rng.gaussian();
            }
            if quant > 0.0 {
                *v = (*v / quant).round() * quant;
            }
        }
        for &c in masked_coords {
            x[c] = deg.sentinel;
        }
    }
}

/// Representation shift: one fixed labeled source passed through
/// progressively lossier views per level; the last level has the smallest
/// sample budget.
pub fn generate_representation_stream(spec: &DriftSpec) -> Result<TaskStream> {
    spec.validate()?;
    let deg = spec.degradation.unwrap_or_default();
    // The source is stationary: initial clusters only.
    let source_spec = DriftSpec {
        births_per_domain: 0,
        cluster_lifetime: None,
        rotation_step_radians: 0.0,
        ..spec.clone()
    };
    let clusters = build_clusters(&source_spec);
    let fractions = spec.samples.fractions();
    let mut domains = Vec::with_capacity(spec.domains);
    for level in 1..=spec.domains {
        let budget = if level == spec.domains && spec.domains > 1 {
            ((spec.samples.total() as f64 * deg.last_level_budget).ceil() as usize).max(12)
        } else {
            spec.samples.total()
        };
        let (mut features, labels) = sample_domain(&source_spec, &clusters, level, budget)?;
        degrade_level(spec, &deg, level, spec.domains, &mut features);
        let (train_idx, valid_idx, test_idx) =
            split_indices(features.len(), fractions, spec.seed, level)?;
        domains.push(DomainDataset {
            domain_id: level,
            features,
            labels,
            train_idx,
            valid_idx,
            test_idx,
        });
    }
    Ok(TaskStream {
        kind: StreamKind::Representation,
        domains,
    })
}

pub fn generate_stream(spec: &DriftSpec) -> Result<TaskStream> {
    if spec.degradation.is_some() {
        generate_representation_stream(spec)
    } else {
        generate_temporal_stream(spec)
    }
}

/// Schema for [`load_csv`]: header must read `f0..f{d-1},label[,domain]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_dim: usize,
    pub num_classes: usize,
    /// train/valid/test fractions used to split on load.
    pub fractions: [f64; 3],
    pub seed: u64,
    pub domain_id: usize,
}

/// Parses and validates one domain CSV, then splits it with the seeded
/// procedure. Errors carry 1-based line numbers.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<DomainDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').collect();
    let mut expected: Vec<String> = (0..schema.feature_dim).map(|i| format!("f{i}")).collect();
    expected.push("label".into());
    if cols.len() < expected.len() || cols[..expected.len()] != expected[..] {
        let missing = expected
            .iter()
            .find(|e| !cols.contains(&e.as_str()))
            .cloned()
            .unwrap_or_else(|| "label".into());
        return Err(Error::Parse {
            line: 1,
            message: format!("header missing or misplaced column `{missing}`"),
        });
    }
    let has_domain = cols.len() == expected.len() + 1 && cols[expected.len()] == "domain";
    if cols.len() > expected.len() && !has_domain {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected trailing columns after `label`: {:?}", &cols[expected.len()..]),
        });
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let expected_cells = schema.feature_dim + 1 + usize::from(has_domain);
        if cells.len() != expected_cells {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {expected_cells} cells, found {}", cells.len()),
            });
        }
        let mut x = Vec::with_capacity(schema.feature_dim);
        for (j, cell) in cells[..schema.feature_dim].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("non-numeric cell in column f{j}: `{cell}`"),
            })?;
            x.push(v);
        }
        let label: usize = cells[schema.feature_dim].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid label `{}`", cells[schema.feature_dim]),
        })?;
        if label >= schema.num_classes {
            return Err(Error::Parse {
                line: lineno,
                message: format!(
                    "unknown label {label} (expected 0..{})",
                    schema.num_classes
                ),
            });
        }
        features.push(x);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    let (train_idx, valid_idx, test_idx) =
        split_indices(features.len(), schema.fractions, schema.seed, schema.domain_id)?;
    Ok(DomainDataset {
        domain_id: schema.domain_id,
        features,
        labels,
        train_idx,
        valid_idx,
        test_idx,
    })
}

/// Writes one domain as CSV (deterministic byte output for a fixed dataset).
pub fn export_csv(dataset: &DomainDataset, path: &Path) -> Result<()> {
    let d = dataset.feature_dim();
    let mut out = String::new();
    for j in 0..d {
        let _ = write!(out, "f{j},");
    }
    out.push_str("label,domain\n");
    for (x, &y) in dataset.features.iter().zip(dataset.labels.iter()) {
        for v in x {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{y},{}", dataset.domain_id);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Manifest tying exported domain CSVs back into a stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StreamManifest {
    pub kind: StreamKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub domains: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub path: PathBuf,
}

/// Exports every domain CSV plus `manifest.json` into `dir`. Manifest
/// entries are stored relative to the manifest itself so the directory can
/// be moved as a unit.
pub fn export_stream(stream: &TaskStream, spec: &DriftSpec, dir: &Path) -> Result<StreamManifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for domain in &stream.domains {
        let name = format!("domain_{:02}.csv", domain.domain_id);
        export_csv(domain, &dir.join(&name))?;
        entries.push(ManifestEntry {
            id: domain.domain_id,
            path: PathBuf::from(name),
        });
    }
    let manifest = StreamManifest {
        kind: stream.kind,
        feature_dim: stream.feature_dim(),
        num_classes: 2,
        seed: spec.seed,
        fractions: spec.samples.fractions(),
        domains: entries,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a stream back from a manifest written by [`export_stream`].
pub fn load_stream(manifest_path: &Path) -> Result<TaskStream> {
    let manifest: StreamManifest =
        serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut domains = Vec::new();
    for entry in &manifest.domains {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let schema = CsvSchema {
            feature_dim: manifest.feature_dim,
            num_classes: manifest.num_classes,
            fractions: manifest.fractions,
            seed: manifest.seed,
            domain_id: entry.id,
        };
        domains.push(load_csv(&path, &schema)?);
    }
    Ok(TaskStream {
        kind: manifest.kind,
        domains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_spec_gives_identical_cluster_layout_across_domains() {
        let spec = DriftSpec {
            rotation_step_radians: 0.0,
            births_per_domain: 0,
            ..DriftSpec::default()
        };
        let clusters = build_clusters(&spec);
        assert_eq!(clusters.len(), 2 * spec.clusters_per_class);
        assert!(clusters.iter().all(|c| c.birth == 1));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DriftSpec::temporal_benchmark();
        let a = generate_temporal_stream(&spec).unwrap();
        let b = generate_temporal_stream(&spec).unwrap();
        for (x, y) in a.domains.iter().zip(b.domains.iter()) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.train_idx, y.train_idx);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let stream = generate_temporal_stream(&DriftSpec::temporal_benchmark()).unwrap();
        for d in &stream.domains {
            let mut seen = vec![0u8; d.features.len()];
            for &i in d.train_idx.iter().chain(&d.valid_idx).chain(&d.test_idx) {
                seen[i] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1), "splits must partition the data");
            assert_eq!(d.train_idx.len(), 2000);
            assert_eq!(d.valid_idx.len(), 500);
            assert_eq!(d.test_idx.len(), 1000);
        }
    }

    #[test]
    fn class_balance_matches_spec() {
        let spec = DriftSpec {
            imbalance: 0.3,
            samples: SplitSizes {
                train: 4000,
                valid: 500,
                test: 1000,
            },
            ..DriftSpec::default()
        };
        let stream = generate_temporal_stream(&spec).unwrap();
        for d in &stream.domains {
            let pos = d.labels.iter().filter(|&&y| y == 1).count() as f64;
            let ratio = pos / d.labels.len() as f64;
            assert!((ratio - 0.3).abs() < 0.02, "ratio {ratio}");
        }
    }

    #[test]
    fn infeasible_schedule_errors() {
        let spec = DriftSpec {
            domains: 4,
            cluster_lifetime: Some(1),
            births_per_domain: 0,
            ..DriftSpec::default()
        };
        assert!(generate_temporal_stream(&spec).is_err());
    }

    #[test]
    fn representation_level_one_equals_source() {
        let spec = DriftSpec::representation_benchmark();
        let rep = generate_representation_stream(&spec).unwrap();
        let plain = generate_temporal_stream(&DriftSpec {
            degradation: None,
            births_per_domain: 0,
            cluster_lifetime: None,
            rotation_step_radians: 0.0,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(rep.domains[0].features, plain.domains[0].features);
        assert_eq!(rep.domains[0].labels, plain.domains[0].labels);
    }

    #[test]
    fn full_masking_hits_sentinel_everywhere() {
        let spec = DriftSpec {
            degradation: Some(DegradeSpec {
                mask_fraction_max: 1.0,
                noise_max: 0.0,
                quant_step_max: 0.0,
                sentinel: -9.0,
                last_level_budget: 0.5,
            }),
            domains: 2,
            ..DriftSpec::default()
        };
        let rep = generate_representation_stream(&spec).unwrap();
        let last = rep.domains.last().unwrap();
        for x in &last.features {
            assert!(x.iter().all(|&v| v == -9.0));
        }
    }

    #[test]
    fn last_level_has_smallest_budget() {
        let rep =
            generate_representation_stream(&DriftSpec::representation_benchmark()).unwrap();
        let sizes: Vec<usize> = rep.domains.iter().map(|d| d.features.len()).collect();
        assert!(sizes.last().unwrap() < &sizes[0]);
    }

    #[test]
    fn csv_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DriftSpec {
            domains: 2,
            samples: SplitSizes {
                train: 60,
                valid: 20,
                test: 20,
            },
            ..DriftSpec::default()
        };
        let stream = generate_temporal_stream(&spec).unwrap();
        let manifest = export_stream(&stream, &spec, dir.path()).unwrap();
        let loaded = load_stream(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(manifest.domains.len(), 2);
        for (a, b) in stream.domains.iter().zip(loaded.domains.iter()) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.train_idx, b.train_idx);
            assert_eq!(a.valid_idx, b.valid_idx);
            assert_eq!(a.test_idx, b.test_idx);
        }
        // Byte-identical re-export.
        let first = std::fs::read(dir.path().join("domain_01.csv")).unwrap();
        export_csv(&stream.domains[0], &dir.path().join("again.csv")).unwrap();
        let second = std::fs::read(dir.path().join("again.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let schema = CsvSchema {
            feature_dim: 2,
            num_classes: 2,
            fractions: [0.34, 0.33, 0.33],
            seed: 1,
            domain_id: 1,
        };
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "f0,f1\n0.1,0.2\n").unwrap();
        let err = load_csv(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("label"), "{err}");

        std::fs::write(&path, "f0,f1,label\n0.1,0.2,0\n0.3,abc,1\n0.5,0.1,0\n").unwrap();
        let err = load_csv(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("f1"), "{err}");

        std::fs::write(&path, "f0,f1,label\n0.1,0.2,0\n0.3,0.4,7\n0.5,0.1,0\n").unwrap();
        let err = load_csv(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("unknown label 7"), "{err}");

        std::fs::write(&path, "f0,f1,label\n0.1,0.2\n0.2,0.1,1\n0.5,0.1,0\n").unwrap();
        let err = load_csv(&path, &schema).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn three_rows_split_one_each() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.csv");
        std::fs::write(&path, "f0,f1,label\n0.1,0.2,0\n0.3,0.4,1\n0.5,0.6,0\n").unwrap();
        let schema = CsvSchema {
            feature_dim: 2,
            num_classes: 2,
            fractions: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            seed: 3,
            domain_id: 0,
        };
        let ds = load_csv(&path, &schema).unwrap();
        assert_eq!(ds.train_idx.len(), 1);
        assert_eq!(ds.valid_idx.len(), 1);
        assert_eq!(ds.test_idx.len(), 1);
    }
}
