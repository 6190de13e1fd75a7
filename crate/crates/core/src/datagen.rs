//! Synthetic biased-corpus generation with controllable decodability of the
//! target and protected labels, plus hashing bag-of-words ingestion of real
//! labeled text.
//!
//! The generator plants one orthonormal mean direction per class of every
//! label, so linear-probe recoverability of each label is dialed directly by
//! its strength. `overlap` rotates each protected-attribute mean partially
//! into the target subspace, entangling the two signals.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::num::Matrix;
use crate::seed::component_rng;

/// One example: features, target label, protected labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
    pub z: Vec<usize>,
}

/// Generator spec for a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub y_arity: usize,
    pub z_arities: Vec<usize>,
    /// Signal scale of the target-label subspace, in [0,1].
    pub y_strength: f64,
    /// Signal scale per protected attribute, in [0,1].
    pub z_strengths: Vec<f64>,
    /// Rotation of protected means into the target subspace, in [0,1].
    pub overlap: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 20_000,
            dim: 64,
            y_arity: 2,
            z_arities: vec![2],
            y_strength: 0.8,
            z_strengths: vec![0.8],
            overlap: 0.3,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.y_arity < 2 || self.z_arities.iter().any(|&k| k < 2) {
            return Err(Error::Data("every label needs at least 2 classes".into()));
        }
        if self.z_arities.len() != self.z_strengths.len() {
            return Err(Error::Data(format!(
                "{} protected arities against {} strengths",
                self.z_arities.len(),
                self.z_strengths.len()
            )));
        }
        let directions = self.y_arity + self.z_arities.iter().sum::<usize>();
        if directions > self.dim {
            return Err(Error::Data(format!(
                "need {directions} orthogonal class directions but dim is {}",
                self.dim
            )));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.y_strength)
            || !self.z_strengths.iter().all(|&v| unit(v))
            || !unit(self.overlap)
        {
            return Err(Error::Data("strengths and overlap must lie in [0,1]".into()));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::Data("noise_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// A corpus in matrix form, ready for training and probing.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub y: Vec<usize>,
    /// Protected labels indexed `[attribute][example]`.
    pub z: Vec<Vec<usize>>,
    pub y_arity: usize,
    pub z_arities: Vec<usize>,
}

/// One minibatch in matrix form.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub z: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn from_examples(
        examples: &[LabeledExample],
        y_arity: usize,
        z_arities: &[usize],
    ) -> Result<Self> {
        let dim = examples.first().map_or(0, |e| e.x.len());
        let mut features = Matrix::zeros(examples.len(), dim);
        let mut y = Vec::with_capacity(examples.len());
        let mut z: Vec<Vec<usize>> = vec![Vec::with_capacity(examples.len()); z_arities.len()];
        for (i, ex) in examples.iter().enumerate() {
            if ex.x.len() != dim {
                return Err(Error::Data(format!(
                    "example {i} has {} features, expected {dim}",
                    ex.x.len()
                )));
            }
            if ex.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("example {i} has non-finite features")));
            }
            if ex.y >= y_arity {
                return Err(Error::Data(format!(
                    "example {i} target label {} out of range {y_arity}",
                    ex.y
                )));
            }
            if ex.z.len() != z_arities.len() {
                return Err(Error::Data(format!(
                    "example {i} carries {} protected labels, expected {}",
                    ex.z.len(),
                    z_arities.len()
                )));
            }
            features.row_mut(i).copy_from_slice(&ex.x);
            y.push(ex.y);
            for (n, (&zv, &arity)) in ex.z.iter().zip(z_arities).enumerate() {
                if zv >= arity {
                    return Err(Error::Data(format!(
                        "example {i} protected label {zv} out of range {arity} for attribute {n}"
                    )));
                }
                z[n].push(zv);
            }
        }
        Ok(Dataset {
            features,
            y,
            z,
            y_arity,
            z_arities: z_arities.to_vec(),
        })
    }

    pub fn to_examples(&self) -> Vec<LabeledExample> {
        (0..self.len())
            .map(|i| LabeledExample {
                x: self.features.row(i).to_vec(),
                y: self.y[i],
                z: self.z.iter().map(|attr| attr[i]).collect(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_attrs(&self) -> usize {
        self.z_arities.len()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let x = self.features.gather_rows(indices)?;
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            y.push(self.y[i]);
        }
        let z = self
            .z
            .iter()
            .map(|attr| indices.iter().map(|&i| attr[i]).collect())
            .collect();
        Ok(Batch { x, y, z })
    }

    /// Restrict to the given rows, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let b = self.batch(indices)?;
        Ok(Dataset {
            features: b.x,
            y: b.y,
            z: b.z,
            y_arity: self.y_arity,
            z_arities: self.z_arities.clone(),
        })
    }

    pub fn check_compatible(&self, dims: &ModelDims) -> Result<()> {
        if self.features.cols() != dims.input {
            return Err(Error::Dimension(format!(
                "dataset has {} features, model expects {}",
                self.features.cols(),
                dims.input
            )));
        }
        if self.y_arity != dims.task_classes || self.z_arities != dims.protected_classes {
            return Err(Error::Dimension(format!(
                "dataset arities (y={}, z={:?}) vs model ({}, {:?})",
                self.y_arity, self.z_arities, dims.task_classes, dims.protected_classes
            )));
        }
        Ok(())
    }

    /// Joint-label key used for stratification.
    fn joint_label(&self, i: usize) -> Vec<usize> {
        let mut key = vec![self.y[i]];
        key.extend(self.z.iter().map(|attr| attr[i]));
        key
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gram-Schmidt orthonormalization of random Gaussian directions.
fn orthonormal_directions(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // essentially-degenerate draw, retry
        }
        for vi in &mut v {
            *vi /= norm;
        }
        basis.push(v);
    }
    basis
}

/// Generate a balanced synthetic corpus per the spec.
///
/// `x = y_strength·μ_y(y) + Σₙ z_strengthₙ·√(1-overlap²)·μ_zₙ(zₙ)
///      + Σₙ z_strengthₙ·overlap·μ_y(zₙ mod |Y|) + σ·ε`.
/// Joint labels are assigned round-robin, so marginals are exactly balanced
/// whenever the joint arity divides `n`.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = component_rng(spec.seed, "datagen", 0);
    let directions = orthonormal_directions(
        spec.y_arity + spec.z_arities.iter().sum::<usize>(),
        spec.dim,
        &mut rng,
    );
    let (y_means, z_means_flat) = directions.split_at(spec.y_arity);
    let mut z_means: Vec<&[Vec<f64>]> = Vec::with_capacity(spec.z_arities.len());
    let mut offset = 0;
    for &k in &spec.z_arities {
        z_means.push(&z_means_flat[offset..offset + k]);
        offset += k;
    }

    let combos: usize = spec.y_arity * spec.z_arities.iter().product::<usize>();
    let cross_scale = (1.0 - spec.overlap * spec.overlap).sqrt();

    let mut features = Matrix::zeros(spec.n, spec.dim);
    let mut y_labels = Vec::with_capacity(spec.n);
    let mut z_labels: Vec<Vec<usize>> = vec![Vec::with_capacity(spec.n); spec.z_arities.len()];
    for i in 0..spec.n {
        let mut combo = i % combos;
        let y = combo % spec.y_arity;
        combo /= spec.y_arity;
        let mut zs = Vec::with_capacity(spec.z_arities.len());
        for &k in &spec.z_arities {
            zs.push(combo % k);
            combo /= k;
        }

        let row = features.row_mut(i);
        for (r, m) in row.iter_mut().zip(&y_means[y]) {
            *r += spec.y_strength * m;
        }
        for (n, &z) in zs.iter().enumerate() {
            let strength = spec.z_strengths[n];
            for (r, m) in row.iter_mut().zip(&z_means[n][z]) {
                *r += strength * cross_scale * m;
            }
            let coupled = &y_means[z % spec.y_arity];
            for (r, m) in row.iter_mut().zip(coupled) {
                *r += strength * spec.overlap * m;
            }
        }
        for r in row.iter_mut() {
            *r += spec.noise_sigma * standard_normal(&mut rng);
        }

        y_labels.push(y);
        for (n, &z) in zs.iter().enumerate() {
            z_labels[n].push(z);
        }
    }

    Ok(Dataset {
        features,
        y: y_labels,
        z: z_labels,
        y_arity: spec.y_arity,
        z_arities: spec.z_arities.clone(),
    })
}

fn hash_token(seed: u64, namespace: &str, token: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in namespace.bytes().chain([0u8]).chain(token.bytes()) {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Signed feature hashing of one document into `dim` buckets (L2-normalized).
pub fn hash_features(text: &str, dim: usize, seed: u64) -> Result<Vec<f64>> {
    if !dim.is_power_of_two() {
        return Err(Error::Data(format!("hash dim {dim} must be a power of two")));
    }
    let mut x = vec![0.0f64; dim];
    let lowered = text.to_lowercase();
    for token in lowered.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let bucket = (hash_token(seed, "bucket", token) as usize) & (dim - 1);
        let sign = if hash_token(seed, "sign", token) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        x[bucket] += sign;
    }
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut x {
            *v /= norm;
        }
    }
    Ok(x)
}

/// Result of TSV ingestion: parsed examples plus the malformed-row count.
#[derive(Debug)]
pub struct TsvIngest {
    pub examples: Vec<LabeledExample>,
    pub skipped: usize,
}

/// Parse `text \t y \t z1 [\t z2 ...]` rows into hashed feature vectors.
/// Malformed rows are skipped and counted.
pub fn featurize_tsv(reader: impl BufRead, dim: usize, seed: u64) -> Result<TsvIngest> {
    if !dim.is_power_of_two() {
        return Err(Error::Data(format!("hash dim {dim} must be a power of two")));
    }
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    let mut num_attrs: Option<usize> = None;
    for line in reader.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            skipped += 1;
            continue;
        }
        let y = match fields[1].trim().parse::<usize>() {
            Ok(v) => v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let z: Option<Vec<usize>> = fields[2..]
            .iter()
            .map(|f| f.trim().parse::<usize>().ok())
            .collect();
        let Some(z) = z else {
            skipped += 1;
            continue;
        };
        match num_attrs {
            None => num_attrs = Some(z.len()),
            Some(expected) if expected != z.len() => {
                skipped += 1;
                continue;
            }
            _ => {}
        }
        examples.push(LabeledExample {
            x: hash_features(fields[0], dim, seed)?,
            y,
            z,
        });
    }
    Ok(TsvIngest { examples, skipped })
}

/// Train/dev/test split.
#[derive(Debug)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub dev: Dataset,
    pub test: Dataset,
    /// False when some stratum was too small and the split fell back to
    /// plain shuffling.
    pub stratified: bool,
}

/// Largest-remainder apportionment of `n` slots into `ratios`.
fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in &order {
        if leftover == 0 {
            break;
        }
        sizes[j] += 1;
        leftover -= 1;
    }
    sizes
}

/// Deterministic stratified split by joint `(y, z)` label. Falls back to an
/// unstratified shuffle when some stratum is smaller than the number of
/// nonempty splits.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<SplitOutcome> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::Data(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let n = dataset.len();
    let targets = apportion(n, &ratios);
    let active_splits = ratios.iter().filter(|&&r| r > 0.0).count();

    // Strata in first-seen order, which is deterministic.
    let mut keys: Vec<Vec<usize>> = Vec::new();
    let mut strata: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let key = dataset.joint_label(i);
        match keys.iter().position(|k| *k == key) {
            Some(s) => strata[s].push(i),
            None => {
                keys.push(key);
                strata.push(vec![i]);
            }
        }
    }

    let mut rng = component_rng(seed, "split", 0);
    let stratified = !strata.iter().any(|s| s.len() < active_splits);

    let mut split_indices: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    if !stratified {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut cursor = 0;
        for (j, &t) in targets.iter().enumerate() {
            split_indices[j].extend_from_slice(&order[cursor..cursor + t]);
            cursor += t;
        }
    } else {
        // Per-stratum floors, then largest-remainder extras constrained by
        // the remaining global deficit of each split.
        let mut deficits = targets.clone();
        let mut plans: Vec<[usize; 3]> = Vec::with_capacity(strata.len());
        let mut extras: Vec<usize> = Vec::with_capacity(strata.len());
        for stratum in &strata {
            let quotas: Vec<f64> = ratios.iter().map(|r| r * stratum.len() as f64).collect();
            let base: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
            for (j, &b) in base.iter().enumerate() {
                deficits[j] -= b.min(deficits[j]);
            }
            extras.push(stratum.len() - base.iter().sum::<usize>());
            plans.push([base[0], base[1], base[2]]);
        }
        for (s, stratum) in strata.iter().enumerate() {
            let quotas: Vec<f64> = ratios.iter().map(|r| r * stratum.len() as f64).collect();
            let mut order: Vec<usize> = (0..3).collect();
            order.sort_by(|&a, &b| {
                let ra = quotas[a] - quotas[a].floor();
                let rb = quotas[b] - quotas[b].floor();
                rb.total_cmp(&ra).then(a.cmp(&b))
            });
            for _ in 0..extras[s] {
                let pick = order
                    .iter()
                    .copied()
                    .find(|&j| deficits[j] > 0)
                    .unwrap_or(0);
                plans[s][pick] += 1;
                deficits[pick] = deficits[pick].saturating_sub(1);
            }
        }
        for (stratum, plan) in strata.iter().zip(&plans) {
            let mut members = stratum.clone();
            members.shuffle(&mut rng);
            let mut cursor = 0;
            for (j, &take) in plan.iter().enumerate() {
                split_indices[j].extend_from_slice(&members[cursor..cursor + take]);
                cursor += take;
            }
        }
    }

    for indices in &mut split_indices {
        indices.sort_unstable();
    }
    Ok(SplitOutcome {
        train: dataset.subset(&split_indices[0])?,
        dev: dataset.subset(&split_indices[1])?,
        test: dataset.subset(&split_indices[2])?,
        stratified,
    })
}

/// Write one JSON object per line: `{"x":[...],"y":0,"z":[1]}`.
pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in dataset.to_examples() {
        let line = serde_json::to_string(&ex)
            .map_err(|e| Error::Format(format!("jsonl serialization: {e}")))?;
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path, y_arity: usize, z_arities: &[usize]) -> Result<Dataset> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut examples = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let ex: LabeledExample = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("jsonl line {}: {e}", lineno + 1)))?;
        examples.push(ex);
    }
    Dataset::from_examples(&examples, y_arity, z_arities)
}
