//! Synthetic datasets, forgetting splits and the `.uds` dataset file.
//!
//! A `.uds` file is a one-line JSON header terminated by `\n`, followed by
//! the `n × p` feature matrix as row-major little-endian f64, followed by
//! the labels (u32le class ids, or f64le targets for regression).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::models::{make_quadratic, DataView, ModelSpec, Objective, Targets};
use crate::numcore::{derive_stream, streams, ParamVector};

pub const UDS_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Labels {
    Classes { labels: Vec<usize>, num_classes: usize },
    Real { values: Vec<f64> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { labels, .. } => labels.len(),
            Labels::Real { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

/// Which slice of a split dataset to view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Retain,
    Forget,
    Test,
    /// Test examples of the kept classes (class-wise splits).
    TestRetain,
    /// Test examples of the forgotten classes (class-wise splits).
    TestForget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    None,
    Random,
    Classwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SplitIndices {
    train: Vec<usize>,
    test: Vec<usize>,
    retain: Vec<usize>,
    forget: Vec<usize>,
    mode: SplitMode,
    forgotten_classes: Option<Vec<usize>>,
}

/// Labelled examples with train/test partition and a retain/forget split
/// of the train partition. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    features: Vec<f64>,
    n: usize,
    p: usize,
    labels: Labels,
    idx: SplitIndices,
    provenance: Provenance,
}

impl SplitDataset {
    /// Unsplit dataset: the retain set is the whole train partition.
    pub fn new(
        features: Vec<f64>,
        p: usize,
        labels: Labels,
        train: Vec<usize>,
        test: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = labels.len();
        if p == 0 || features.len() != n * p {
            return Err(ForgeError::DimensionMismatch { expected: n * p, got: features.len() });
        }
        let idx = SplitIndices {
            retain: train.clone(),
            train,
            test,
            forget: Vec::new(),
            mode: SplitMode::None,
            forgotten_classes: None,
        };
        let ds = Self { features, n, p, labels, idx, provenance };
        ds.check_invariants()?;
        Ok(ds)
    }

    fn check_invariants(&self) -> Result<()> {
        if !crate::numcore::all_finite(&self.features) {
            return Err(ForgeError::NonFinite("dataset features".into()));
        }
        if let Labels::Classes { labels, num_classes } = &self.labels {
            if *num_classes < 2 || labels.iter().any(|&y| y >= *num_classes) {
                return Err(ForgeError::Format("class labels out of range".into()));
            }
        }
        let mut seen = vec![0u8; self.n];
        for (set, bit) in [(&self.idx.train, 1u8), (&self.idx.test, 2)] {
            for &i in set {
                if i >= self.n || seen[i] & bit != 0 {
                    return Err(ForgeError::Format(format!("index {i} out of range or repeated")));
                }
                seen[i] |= bit;
            }
        }
        if seen.contains(&3) {
            return Err(ForgeError::Format("train and test overlap".into()));
        }
        let mut part = vec![0u8; self.n];
        for (set, bit) in [(&self.idx.retain, 1u8), (&self.idx.forget, 2)] {
            for &i in set {
                if i >= self.n || seen[i] & 1 == 0 || part[i] != 0 {
                    return Err(ForgeError::Format(format!("retain/forget index {i} invalid or overlapping")));
                }
                part[i] = bit;
            }
        }
        if self.idx.train.iter().any(|&i| part[i] == 0) {
            return Err(ForgeError::Format("retain and forget do not cover the train partition".into()));
        }
        if let Some(classes) = &self.idx.forgotten_classes {
            let Labels::Classes { labels, .. } = &self.labels else {
                return Err(ForgeError::Format("forgotten classes on a regression dataset".into()));
            };
            let expect: Vec<usize> =
                self.idx.train.iter().copied().filter(|&i| classes.contains(&labels[i])).collect();
            let mut got = self.idx.forget.clone();
            got.sort_unstable();
            let mut expect = expect;
            expect.sort_unstable();
            if got != expect {
                return Err(ForgeError::Format("forget set does not match the forgotten classes".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn input_dim(&self) -> usize {
        self.p
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.labels {
            Labels::Classes { num_classes, .. } => Some(*num_classes),
            Labels::Real { .. } => None,
        }
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn split_mode(&self) -> SplitMode {
        self.idx.mode
    }

    pub fn forgotten_classes(&self) -> Option<&[usize]> {
        self.idx.forgotten_classes.as_deref()
    }

    pub fn indices(&self, part: Part) -> Vec<usize> {
        match part {
            Part::Train => self.idx.train.clone(),
            Part::Retain => self.idx.retain.clone(),
            Part::Forget => self.idx.forget.clone(),
            Part::Test => self.idx.test.clone(),
            Part::TestRetain | Part::TestForget => {
                let classes = self.idx.forgotten_classes.as_deref().unwrap_or(&[]);
                let want_forgotten = part == Part::TestForget;
                match &self.labels {
                    Labels::Classes { labels, .. } => self
                        .idx
                        .test
                        .iter()
                        .copied()
                        .filter(|&i| classes.contains(&labels[i]) == want_forgotten)
                        .collect(),
                    Labels::Real { .. } => Vec::new(),
                }
            }
        }
    }

    /// Features and targets of the given examples, in the given order.
    pub fn view_of(&self, idx: &[usize]) -> Result<DataView> {
        let mut inputs = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            inputs.extend_from_slice(&self.features[i * self.p..(i + 1) * self.p]);
        }
        let targets = match &self.labels {
            Labels::Classes { labels, num_classes } => {
                Targets::Classes { labels: idx.iter().map(|&i| labels[i]).collect(), num_classes: *num_classes }
            }
            Labels::Real { values } => Targets::Real(idx.iter().map(|&i| values[i]).collect()),
        };
        DataView::new(inputs, self.p, targets)
    }

    pub fn view(&self, part: Part) -> Result<DataView> {
        self.view_of(&self.indices(part))
    }

    /// Objective of `spec` averaged over one part; errors on an empty part.
    pub fn objective(&self, spec: &ModelSpec, part: Part) -> Result<Objective> {
        let view = self.view(part)?;
        if view.is_empty() {
            return Err(ForgeError::EmptyData(format!("{part:?} set is empty")));
        }
        Objective::new(spec.clone(), view)
    }

    /// Checks that `spec` fits this dataset's input and label shapes.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        spec.validate()?;
        if spec.input_dim() != Some(self.p) || spec.num_classes() != self.num_classes() {
            return Err(ForgeError::InvalidArgument(format!(
                "model spec does not match dataset (p = {}, classes = {:?})",
                self.p,
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Stable digest of the forget set, for caching oracle results.
    pub fn forget_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update((self.p as u64).to_le_bytes());
        let view = self.view(Part::Forget).expect("forget view");
        for i in 0..view.len() {
            for x in view.input(i) {
                h.update(x.to_le_bytes());
            }
        }
        match &self.labels {
            Labels::Classes { labels, .. } => self.idx.forget.iter().for_each(|&i| h.update((labels[i] as u64).to_le_bytes())),
            Labels::Real { values } => self.idx.forget.iter().for_each(|&i| h.update(values[i].to_le_bytes())),
        }
        hex::encode(h.finalize())
    }

    fn with_split(&self, retain: Vec<usize>, forget: Vec<usize>, mode: SplitMode, classes: Option<Vec<usize>>) -> Result<Self> {
        let mut out = self.clone();
        out.idx.retain = retain;
        out.idx.forget = forget;
        out.idx.mode = mode;
        out.idx.forgotten_classes = classes;
        out.check_invariants()?;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (label_kind, num_classes) = match &self.labels {
            Labels::Classes { num_classes, .. } => ("class", *num_classes),
            Labels::Real { .. } => ("real", 0),
        };
        let header = UdsHeader {
            schema_version: UDS_SCHEMA_VERSION,
            n: self.n,
            p: self.p,
            dtype: "f64le".into(),
            label_kind: label_kind.into(),
            num_classes,
            provenance: self.provenance.clone(),
            splits: self.idx.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for x in &self.features {
            out.extend_from_slice(&x.to_le_bytes());
        }
        match &self.labels {
            Labels::Classes { labels, .. } => {
                for &y in labels {
                    out.extend_from_slice(&(y as u32).to_le_bytes());
                }
            }
            Labels::Real { values } => {
                for y in values {
                    out.extend_from_slice(&y.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ForgeError::Format("missing .uds header terminator".into()))?;
        let header: UdsHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.schema_version != UDS_SCHEMA_VERSION {
            return Err(ForgeError::Version { found: header.schema_version, supported: UDS_SCHEMA_VERSION });
        }
        if header.dtype != "f64le" {
            return Err(ForgeError::Format(format!("unsupported dtype {}", header.dtype)));
        }
        let body = &bytes[nl + 1..];
        let nf = header.n.checked_mul(header.p).ok_or_else(|| ForgeError::Format("shape overflow".into()))?;
        let label_width = match header.label_kind.as_str() {
            "class" => 4,
            "real" => 8,
            other => return Err(ForgeError::Format(format!("unknown label kind {other}"))),
        };
        if body.len() != nf * 8 + header.n * label_width {
            return Err(ForgeError::Format(format!(
                "body length {} does not match header shapes",
                body.len()
            )));
        }
        let f64_at = |b: &[u8], i: usize| f64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().expect("8 bytes"));
        let features: Vec<f64> = (0..nf).map(|i| f64_at(body, i)).collect();
        let lb = &body[nf * 8..];
        let labels = if label_width == 4 {
            let labels = (0..header.n)
                .map(|i| u32::from_le_bytes(lb[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as usize)
                .collect();
            Labels::Classes { labels, num_classes: header.num_classes }
        } else {
            Labels::Real { values: (0..header.n).map(|i| f64_at(lb, i)).collect() }
        };
        let ds = SplitDataset {
            features,
            n: header.n,
            p: header.p,
            labels,
            idx: header.splits,
            provenance: header.provenance,
        };
        ds.check_invariants()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[derive(Serialize, Deserialize)]
struct UdsHeader {
    schema_version: u32,
    n: usize,
    p: usize,
    dtype: String,
    label_kind: String,
    num_classes: usize,
    provenance: Provenance,
    splits: SplitIndices,
}

/// Gaussian-blob generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub separation: f64,
    pub noise_sd: f64,
    /// Centres are drawn uniformly in `[-h, h]^p`; default
    /// `h = separation · C^{1/p}`.
    #[serde(default)]
    pub box_half_width: Option<f64>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_attempts() -> usize {
    10_000
}

fn default_test_fraction() -> f64 {
    0.2
}

impl BlobParams {
    pub fn new(n_per_class: usize, num_classes: usize, input_dim: usize, separation: f64, noise_sd: f64) -> Self {
        Self {
            n_per_class,
            num_classes,
            input_dim,
            separation,
            noise_sd,
            box_half_width: None,
            max_attempts: default_attempts(),
            test_fraction: default_test_fraction(),
        }
    }
}

/// Gaussian clusters with pairwise centre distance ≥ `separation` and a
/// stratified 80/20 train/test partition.
pub fn gen_blobs(n_per_class: usize, num_classes: usize, p: usize, separation: f64, noise_sd: f64, seed: u64) -> Result<SplitDataset> {
    gen_blobs_with(&BlobParams::new(n_per_class, num_classes, p, separation, noise_sd), seed)
}

pub fn gen_blobs_with(bp: &BlobParams, seed: u64) -> Result<SplitDataset> {
    let (c, p) = (bp.num_classes, bp.input_dim);
    if c < 2 || p < 2 {
        return Err(ForgeError::InvalidArgument("gen_blobs needs C >= 2 and p >= 2".into()));
    }
    if bp.n_per_class == 0 {
        return Err(ForgeError::InvalidArgument("n_per_class must be >= 1".into()));
    }
    if !(bp.separation >= 0.0 && bp.noise_sd >= 0.0 && bp.separation.is_finite() && bp.noise_sd.is_finite()) {
        return Err(ForgeError::InvalidArgument("separation and noise_sd must be finite and >= 0".into()));
    }
    if !(0.0..1.0).contains(&bp.test_fraction) {
        return Err(ForgeError::InvalidArgument("test_fraction must be in [0, 1)".into()));
    }
    let root = derive_stream(seed, streams::DATA);
    let half = bp.box_half_width.unwrap_or(bp.separation * (c as f64).powf(1.0 / p as f64));

    let mut rng = root.substream(0);
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(c);
    let mut attempts = 0;
    while centres.len() < c {
        if attempts == bp.max_attempts {
            return Err(ForgeError::Placement(format!(
                "placed {} of {c} centres with separation {} in [-{half}, {half}]^{p} after {attempts} attempts",
                centres.len(),
                bp.separation
            )));
        }
        attempts += 1;
        let cand: Vec<f64> = (0..p).map(|_| half * (2.0 * rng.uniform() - 1.0)).collect();
        let ok = centres.iter().all(|m| {
            m.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= bp.separation
        });
        if ok {
            centres.push(cand);
        }
    }

    let n = c * bp.n_per_class;
    let mut rng = root.substream(1);
    let mut features = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % c;
        labels.push(y);
        features.extend(centres[y].iter().map(|m| m + bp.noise_sd * rng.normal()));
    }

    let mut rng = root.substream(2);
    let n_test_c = (bp.test_fraction * bp.n_per_class as f64).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for y in 0..c {
        let mut members: Vec<usize> = (0..n).filter(|i| i % c == y).collect();
        rng.shuffle(&mut members);
        test.extend_from_slice(&members[..n_test_c]);
        train.extend_from_slice(&members[n_test_c..]);
    }
    train.sort_unstable();
    test.sort_unstable();

    let provenance = Provenance { generator: "blobs".into(), params: serde_json::to_value(bp)?, seed };
    SplitDataset::new(features, p, Labels::Classes { labels, num_classes: c }, train, test, provenance)
}

/// Random forgetting: a seeded uniform sample of `⌊fraction·|train|⌋`
/// train examples.
pub fn split_random(ds: &SplitDataset, fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ForgeError::InvalidArgument("forget fraction must be in (0, 1)".into()));
    }
    let train = &ds.idx.train;
    let k = (fraction * train.len() as f64).floor() as usize;
    if k == 0 || k == train.len() {
        return Err(ForgeError::InvalidArgument(format!(
            "fraction {fraction} of {} train examples leaves an empty forget or retain set",
            train.len()
        )));
    }
    let mut rng = derive_stream(seed, streams::SPLIT);
    let mut chosen = vec![false; train.len()];
    for j in rng.sample_without_replacement(train.len(), k) {
        chosen[j] = true;
    }
    let forget: Vec<usize> = train.iter().zip(&chosen).filter(|(_, &c)| c).map(|(&i, _)| i).collect();
    let retain: Vec<usize> = train.iter().zip(&chosen).filter(|(_, &c)| !c).map(|(&i, _)| i).collect();
    ds.with_split(retain, forget, SplitMode::Random, None)
}

/// Class-wise forgetting: `round(fraction·C)` seeded classes are forgotten
/// entirely.
pub fn split_classwise(ds: &SplitDataset, fraction: f64, seed: u64) -> Result<SplitDataset> {
    let Labels::Classes { labels, num_classes } = &ds.labels else {
        return Err(ForgeError::Unsupported("class-wise split on a regression dataset".into()));
    };
    let c = *num_classes;
    let k = (fraction * c as f64).round() as usize;
    if !(fraction.is_finite()) || k == 0 || k >= c {
        return Err(ForgeError::InvalidArgument(format!(
            "fraction {fraction} of {c} classes forgets {k} classes; need 0 < k < C"
        )));
    }
    let mut rng = derive_stream(seed, streams::SPLIT);
    let mut classes = rng.sample_without_replacement(c, k);
    classes.sort_unstable();
    let (forget, retain): (Vec<usize>, Vec<usize>) = ds.idx.train.iter().partition(|&&i| classes.contains(&labels[i]));
    ds.with_split(retain, forget, SplitMode::Classwise, Some(classes))
}

/// Paired analytic retain / forget objectives.
#[derive(Clone, Debug)]
pub struct QuadraticTask {
    pub retain: Objective,
    pub forget: Objective,
}

pub fn gen_quadratic_task(
    spectrum: Vec<f64>,
    theta_star: ParamVector,
    l_star: f64,
    forget_spectrum: Vec<f64>,
    forget_theta_star: ParamVector,
) -> Result<QuadraticTask> {
    if spectrum.len() != forget_spectrum.len() || theta_star.dim() != forget_theta_star.dim() {
        return Err(ForgeError::DimensionMismatch { expected: spectrum.len(), got: forget_spectrum.len() });
    }
    Ok(QuadraticTask {
        retain: make_quadratic(spectrum, theta_star, l_star)?,
        forget: make_quadratic(forget_spectrum, forget_theta_star, l_star)?,
    })
}

impl QuadraticTask {
    /// Fixed point of the expected unlearning update
    /// `θ ← αθ + (1−α)E[θ_init] − η∇_r + cη∇_f` (with `E[θ_init] = 0`):
    /// `((1−α)I + ηA_r − cηA_f) θ = ηA_r θ*_r − cηA_f θ*_f`.
    pub fn expected_fixed_point(&self, alpha: f64, c: f64, eta: f64) -> Result<ParamVector> {
        let (ModelSpec::Quadratic { spectrum: ar, theta_star: tr, .. }, ModelSpec::Quadratic { spectrum: af, theta_star: tf, .. }) =
            (self.retain.model(), self.forget.model())
        else {
            unreachable!("quadratic task holds quadratic objectives")
        };
        let out: Vec<f64> = (0..ar.len())
            .map(|i| {
                let denom = (1.0 - alpha) + eta * ar[i] - c * eta * af[i];
                (eta * ar[i] * tr[i] - c * eta * af[i] * tf[i]) / denom
            })
            .collect();
        if (0..ar.len()).any(|i| (1.0 - alpha) + eta * ar[i] - c * eta * af[i] <= 0.0) {
            return Err(ForgeError::Unsupported("expected update has no attracting fixed point".into()));
        }
        ParamVector::new(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> SplitDataset {
        gen_blobs(50, 4, 3, 4.0, 0.5, 11).unwrap()
    }

    #[test]
    fn blobs_shape_and_stratification() {
        let ds = blobs();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.indices(Part::Test).len(), 40);
        assert_eq!(ds.indices(Part::Train).len(), 160);
        let Labels::Classes { labels, .. } = ds.labels() else { panic!() };
        for y in 0..4 {
            assert_eq!(ds.indices(Part::Test).iter().filter(|&&i| labels[i] == y).count(), 10);
        }
        assert!(ds.indices(Part::Forget).is_empty());
        assert_eq!(ds.indices(Part::Retain), ds.indices(Part::Train));
    }

    #[test]
    fn blob_centres_respect_separation() {
        let bp = BlobParams::new(1, 6, 2, 3.0, 0.0);
        let ds = gen_blobs_with(&bp, 3).unwrap();
        let f = ds.features();
        for a in 0..6 {
            for b in 0..a {
                let d = ((f[2 * a] - f[2 * b]).powi(2) + (f[2 * a + 1] - f[2 * b + 1]).powi(2)).sqrt();
                assert!(d >= 3.0, "{d}");
            }
        }
    }

    #[test]
    fn infeasible_placement_errors() {
        let mut bp = BlobParams::new(5, 10, 2, 5.0, 0.1);
        bp.box_half_width = Some(1.0);
        bp.max_attempts = 500;
        assert!(matches!(gen_blobs_with(&bp, 0), Err(ForgeError::Placement(_))));
    }

    #[test]
    fn blobs_deterministic_bytes() {
        assert_eq!(blobs().to_bytes().unwrap(), blobs().to_bytes().unwrap());
        assert_ne!(blobs().to_bytes().unwrap(), gen_blobs(50, 4, 3, 4.0, 0.5, 12).unwrap().to_bytes().unwrap());
    }

    #[test]
    fn random_split_sizes() {
        let mk = |n_train: usize| {
            let features = vec![0.0; n_train * 2];
            let labels = Labels::Classes { labels: (0..n_train).map(|i| i % 2).collect(), num_classes: 2 };
            let prov = Provenance { generator: "test".into(), params: serde_json::Value::Null, seed: 0 };
            SplitDataset::new(features, 2, labels, (0..n_train).collect(), vec![], prov).unwrap()
        };
        assert_eq!(split_random(&mk(1000), 0.3, 1).unwrap().indices(Part::Forget).len(), 300);
        assert_eq!(split_random(&mk(999), 0.5, 1).unwrap().indices(Part::Forget).len(), 499);
        let a = split_random(&mk(100), 0.3, 5).unwrap();
        assert_eq!(a, split_random(&mk(100), 0.3, 5).unwrap());
        assert_ne!(a, split_random(&mk(100), 0.3, 6).unwrap());
        assert!(split_random(&mk(3), 0.2, 1).is_err());
        assert!(split_random(&mk(10), 0.0, 1).is_err());
        assert!(split_random(&mk(10), 1.0, 1).is_err());
    }

    #[test]
    fn classwise_split() {
        let ds = gen_blobs(10, 10, 2, 3.0, 0.3, 2).unwrap();
        let s = split_classwise(&ds, 0.3, 9).unwrap();
        let classes = s.forgotten_classes().unwrap().to_vec();
        assert_eq!(classes.len(), 3);
        let Labels::Classes { labels, .. } = s.labels() else { panic!() };
        let rederived: Vec<usize> =
            s.indices(Part::Train).into_iter().filter(|&i| classes.contains(&labels[i])).collect();
        assert_eq!(s.indices(Part::Forget), rederived);
        assert!(s.indices(Part::TestForget).iter().all(|&i| classes.contains(&labels[i])));
        assert!(s.indices(Part::TestRetain).iter().all(|&i| !classes.contains(&labels[i])));
        assert_eq!(s.indices(Part::TestForget).len() + s.indices(Part::TestRetain).len(), s.indices(Part::Test).len());
        assert!(split_classwise(&ds, 0.01, 1).is_err());
        assert!(split_classwise(&ds, 0.99, 1).is_err());
    }

    #[test]
    fn uds_round_trip_and_corruption() {
        let s = split_random(&blobs(), 0.3, 4).unwrap();
        let bytes = s.to_bytes().unwrap();
        let back = SplitDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(SplitDataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.uds");
        s.save(&path).unwrap();
        assert_eq!(SplitDataset::load(&path).unwrap(), s);
    }

    #[test]
    fn quadratic_task_fixed_points() {
        let z = |v: &[f64]| ParamVector::new(v.to_vec()).unwrap();
        let t = gen_quadratic_task(vec![2.0, 1.0], z(&[1.0, -1.0]), 0.0, vec![2.0, 1.0], z(&[3.0, 2.0])).unwrap();
        // c = 0, α = 1: exactly the retain optimum.
        assert_eq!(t.expected_fixed_point(1.0, 0.0, 0.1).unwrap().as_slice(), &[1.0, -1.0]);
        // Same spectra: per coordinate θ = (θr − cθf)/(1 − c) when α = 1.
        let fp = t.expected_fixed_point(1.0, 0.25, 0.1).unwrap();
        assert!((fp.as_slice()[0] - (1.0 - 0.75) / 0.75).abs() < 1e-14);
        assert!((fp.as_slice()[1] - (-1.0 - 0.5) / 0.75).abs() < 1e-14);
        // Stationarity of the expected update.
        let (a, c, eta) = (0.99, 0.3, 0.2);
        let fp = t.expected_fixed_point(a, c, eta).unwrap();
        let gr = t.retain.gradient(&fp).unwrap();
        let gf = t.forget.gradient(&fp).unwrap();
        for i in 0..2 {
            let next = a * fp.as_slice()[i] - eta * gr.as_slice()[i] + c * eta * gf.as_slice()[i];
            assert!((next - fp.as_slice()[i]).abs() < 1e-12);
        }
        assert!(t.expected_fixed_point(1.0, 1.0, 0.1).is_err());
    }
}
