//! Samples, stratified splits, oversampling, batching and the synthetic
//! lesion-volume generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::encoders::tabular::{FieldKind, Record, Standardizer, TabularSchema, Value};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Label of the minority (positive) class.
pub const MINORITY: u8 = 1;
pub const DEFAULT_MAJORITY: usize = 251;
pub const DEFAULT_MINORITY: usize = 61;

/// `(count, val, test)` per class at the default counts; other counts are
/// split in the same proportions.
const MINORITY_SPLIT: (usize, usize, usize) = (DEFAULT_MINORITY, 12, 15);
const MAJORITY_SPLIT: (usize, usize, usize) = (DEFAULT_MAJORITY, 25, 28);

/// Tabular shift in standard units per unit of `class_signal`.
pub const TAB_SIGNAL: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, D, H, W]`
    pub volume: Tensor<f64>,
    pub record: Record,
    pub label: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub geometry: [usize; 3],
    pub schema: TabularSchema,
    pub samples: Vec<Sample>,
    pub splits: Splits,
}

/// `[B,1,D,H,W]` volumes and their labels.
#[derive(Clone, Debug)]
pub struct VolumeBatch<T> {
    pub volumes: Tensor<T>,
    pub labels: Vec<u8>,
}

/// `[B, width]` encoded clinical rows and their labels.
#[derive(Clone, Debug)]
pub struct TabularBatch<T> {
    pub features: Tensor<T>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn labels(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.samples[i].label).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.samples.len();
        for s in &self.samples {
            if s.volume.shape() != [1, self.geometry[0], self.geometry[1], self.geometry[2]] {
                return Err(Error::Data(format!("sample {}: volume {:?} does not match geometry {:?}", s.id, s.volume.shape(), self.geometry)));
            }
            if s.label > 1 {
                return Err(Error::Data(format!("sample {}: label {} is not 0 or 1", s.id, s.label)));
            }
            self.schema.validate(&s.record).map_err(|e| Error::Data(format!("sample {}: {e}", s.id)))?;
        }
        let mut seen = vec![false; n];
        for &i in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("split index {i} is out of range or repeated")));
            }
        }
        Ok(())
    }

    /// Standardisation statistics from the training split.
    pub fn fit_standardizer(&self) -> Result<Standardizer> {
        let recs: Vec<Record> = self.splits.train.iter().map(|&i| self.samples[i].record.clone()).collect();
        self.schema.fit(&recs)
    }

    /// Stacks the volumes at `idx`, each passed through `transform`.
    pub fn volume_batch<T: Scalar>(
        &self,
        idx: &[usize],
        mut transform: impl FnMut(&Tensor<f64>) -> Tensor<f64>,
    ) -> Result<VolumeBatch<T>> {
        let [d, h, w] = self.geometry;
        let mut data = Vec::with_capacity(idx.len() * d * h * w);
        for &i in idx {
            data.extend(transform(&self.samples[i].volume).data().iter().map(|&x| T::lit(x)));
        }
        Ok(VolumeBatch { volumes: Tensor::new(vec![idx.len(), 1, d, h, w], data)?, labels: self.labels(idx) })
    }

    pub fn tabular_batch<T: Scalar>(&self, idx: &[usize], stats: &Standardizer) -> Result<TabularBatch<T>> {
        let recs: Vec<Record> = idx.iter().map(|&i| self.samples[i].record.clone()).collect();
        Ok(TabularBatch { features: self.schema.encode(&recs, stats)?, labels: self.labels(idx) })
    }
}

fn split_sizes(n: usize, (n0, val0, test0): (usize, usize, usize)) -> (usize, usize) {
    if n == n0 {
        return (val0, test0);
    }
    if n < 3 {
        return (0, 0);
    }
    let val = ((n * val0) as f64 / n0 as f64).round().max(1.0) as usize;
    let test = ((n * test0) as f64 / n0 as f64).round().max(1.0) as usize;
    if val + test < n {
        (val, test)
    } else {
        (1, 1)
    }
}

/// Stratified train/val/test split. At the default class counts the
/// minority class gets val 12 / test 15 and the majority val 25 / test 28;
/// other counts keep those per-class proportions.
pub fn stratified_split(labels: &[u8], seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut splits = Splits::default();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let proto = if class == MINORITY { MINORITY_SPLIT } else { MAJORITY_SPLIT };
        let (val, test) = split_sizes(idx.len(), proto);
        let train = idx.len() - val - test;
        splits.train.extend_from_slice(&idx[..train]);
        splits.val.extend_from_slice(&idx[train..train + val]);
        splits.test.extend_from_slice(&idx[train + val..]);
    }
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort_unstable();
    }
    splits
}

/// Random oversampling of the minority class in `train` (indices into
/// `labels`). Returns every original index followed by minority indices
/// drawn uniformly with replacement until the minority count reaches
/// `target`, which defaults to the majority count. Nothing is added when
/// the minority already meets the target.
pub fn oversample(train: &[usize], labels: &[u8], minority: u8, target: Option<usize>, seed: u64) -> Result<Vec<usize>> {
    let pool: Vec<usize> = train.iter().copied().filter(|&i| labels[i] == minority).collect();
    if pool.is_empty() {
        return Err(Error::Data(format!("training split has no samples of minority class {minority}")));
    }
    let target = target.unwrap_or(train.len() - pool.len());
    let mut out = train.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    for _ in pool.len()..target {
        out.push(pool[rng.random_range(0..pool.len())]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_majority: usize,
    pub n_minority: usize,
    pub geometry: [usize; 3],
    /// Lesion brightness in units of the unit-variance background noise.
    pub class_signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_majority: DEFAULT_MAJORITY,
            n_minority: DEFAULT_MINORITY,
            geometry: crate::encoders::backbone::TOY_GEOMETRY,
            class_signal: 5.0,
            seed: 0,
        }
    }
}

/// Level drawn with probability ∝ exp(tilt·k) over `k = 0..n`.
fn tilted_choice<R: Rng + ?Sized>(rng: &mut R, n: usize, tilt: f64) -> usize {
    let w: Vec<f64> = (0..n).map(|k| (tilt * k as f64).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return k;
        }
        u -= wk;
    }
    n - 1
}

fn synth_record<R: Rng + ?Sized>(schema: &TabularSchema, label: u8, class_signal: f64, rng: &mut R) -> Record {
    // Positive class: older, lighter, later stage, heavier smoking.
    let z = TAB_SIGNAL * class_signal * if label == MINORITY { 1.0 } else { 0.0 };
    let sign = if label == MINORITY { 1.0 } else { -1.0 };
    schema
        .fields
        .iter()
        .map(|f| match (&f.kind, f.name.as_str()) {
            (FieldKind::Numeric, "age") => Value::Num(Normal::new(60.0 + 9.0 * z, 9.0).unwrap().sample(rng)),
            (FieldKind::Numeric, "weight") => Value::Num(Normal::new(70.0 - 12.0 * z, 12.0).unwrap().sample(rng)),
            (FieldKind::Numeric, _) => Value::Num(StandardNormal.sample(rng)),
            (FieldKind::Categorical(levels), _) => {
                let tilt = 0.25 * TAB_SIGNAL * class_signal * sign;
                Value::Cat(levels[tilted_choice(rng, levels.len(), tilt)].clone())
            }
        })
        .collect()
}

/// Unit-variance Gaussian noise plus one ellipsoid of in-plane radius 2–4
/// voxels and depth radius `min(2, (D−1)/2)` at a random position. The
/// ellipsoid is brightened by `class_signal` in minority-class volumes and
/// left at background level otherwise.
fn synth_volume<R: Rng + ?Sized>(geometry: [usize; 3], label: u8, class_signal: f64, rng: &mut R) -> Tensor<f64> {
    let [d, h, w] = geometry;
    let mut v = Tensor::from_fn(&[1, d, h, w], |_| StandardNormal.sample(rng));
    let r = rng.random_range(2..=4usize).min((h.min(w) - 1) / 2);
    let rd = 2.min((d - 1) / 2);
    let (cz, cy, cx) = (rng.random_range(rd..d - rd), rng.random_range(r..h - r), rng.random_range(r..w - r));
    let amp = if label == MINORITY { class_signal } else { 0.0 };
    let data = v.data_mut();
    for z in cz - rd..=cz + rd {
        for y in cy - r..=cy + r {
            for x in cx - r..=cx + r {
                let q = |a: usize, c: usize, rad: usize| ((a as f64 - c as f64) / rad as f64).powi(2);
                if q(z, cz, rd) + q(y, cy, r) + q(x, cx, r) <= 1.0 {
                    data[(z * h + y) * w + x] += amp;
                }
            }
        }
    }
    v
}

/// Deterministic synthetic cohort: labels are laid out majority first, each
/// sample draws from its own RNG stream, and the split is stratified.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    let [d, h, w] = cfg.geometry;
    if d < 3 || h < 9 || w < 9 {
        return Err(Error::Config(format!("geometry {:?} too small for a lesion; need D ≥ 3 and H, W ≥ 9", cfg.geometry)));
    }
    if cfg.n_majority == 0 || cfg.n_minority == 0 {
        return Err(Error::Config("both class counts must be at least 1".into()));
    }
    if !cfg.class_signal.is_finite() {
        return Err(Error::Config("class_signal must be finite".into()));
    }
    let schema = TabularSchema::default();
    let n = cfg.n_majority + cfg.n_minority;
    let samples: Vec<Sample> = (0..n)
        .map(|i| {
            let label = u8::from(i >= cfg.n_majority);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1000 + i as u64);
            let volume = synth_volume(cfg.geometry, label, cfg.class_signal, &mut rng);
            let record = synth_record(&schema, label, cfg.class_signal, &mut rng);
            Sample { id: format!("case{i:04}"), volume, record, label }
        })
        .collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let splits = stratified_split(&labels, cfg.seed);
    Ok(Dataset { geometry: cfg.geometry, schema, samples, splits })
}
