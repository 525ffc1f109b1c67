//! Vector-quantization bottleneck with an EMA-maintained dictionary.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{hash_tensors, GraphError, NodeId, Tensor, ValueGraph};

pub const DEFAULT_K: usize = 64;
pub const DEFAULT_D: usize = 32;
pub const DEFAULT_DECAY: f64 = 0.99;
/// Floor on cluster counts when dividing sums by counts.
pub const COUNT_FLOOR: f64 = 1e-5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodebookError {
    #[error("query has dimension {got}, codebook entries have {expected}")]
    Dim { expected: usize, got: usize },
    #[error("codebook is frozen")]
    Frozen,
    #[error("{queries} queries but {assignments} assignments")]
    AssignmentCount { queries: usize, assignments: usize },
    #[error("assignment {index} out of range for {k} codes")]
    IndexOutOfRange { index: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    /// `K x D`
    pub entries: Tensor,
    /// EMA cluster counts `N_i`.
    pub counts: Vec<f64>,
    /// EMA cluster sums `m_i`, `K x D`.
    pub sums: Tensor,
    pub decay: f64,
    pub frozen: bool,
}

impl Codebook {
    /// Entries drawn from `N(0, 0.1²)`, counts 1, sums equal to the entries.
    pub fn new<R: Rng + ?Sized>(k: usize, d: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let entries = Tensor::from_vec(k, d, (0..k * d).map(|_| normal.sample(rng)).collect());
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Tensor) -> Self {
        Self {
            counts: vec![1.0; entries.rows],
            sums: entries.clone(),
            entries,
            decay: DEFAULT_DECAY,
            frozen: false,
        }
    }

    pub fn k(&self) -> usize {
        self.entries.rows
    }

    pub fn d(&self) -> usize {
        self.entries.cols
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        self.entries.row(i)
    }

    /// Nearest entry by Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, z: &[f64]) -> Result<(usize, Vec<f64>), CodebookError> {
        if z.len() != self.d() {
            return Err(CodebookError::Dim {
                expected: self.d(),
                got: z.len(),
            });
        }
        let mut best = (0, f64::INFINITY);
        for i in 0..self.k() {
            let d2: f64 = self
                .entry(i)
                .iter()
                .zip(z)
                .map(|(e, x)| (x - e) * (x - e))
                .sum();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        Ok((best.0, self.entry(best.0).to_vec()))
    }

    /// Row-wise [`quantize`](Self::quantize) of a `B x D` tensor.
    pub fn quantize_batch(&self, z: &Tensor) -> Result<(Vec<usize>, Tensor), CodebookError> {
        let mut idx = Vec::with_capacity(z.rows);
        let mut out = Tensor::zeros(z.rows, self.d());
        for r in 0..z.rows {
            let (i, e) = self.quantize(z.row(r))?;
            idx.push(i);
            out.row_mut(r).copy_from_slice(&e);
        }
        Ok((idx, out))
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(indices.len(), self.d());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.entry(i));
        }
        out
    }

    /// `N ← λN + (1−λ)n`, `m ← λm + (1−λ)Σz`, `e = m / N` for every code.
    pub fn ema_update(&mut self, batch_z: &[Vec<f64>], assignments: &[usize]) -> Result<(), CodebookError> {
        if self.frozen {
            return Err(CodebookError::Frozen);
        }
        if batch_z.len() != assignments.len() {
            return Err(CodebookError::AssignmentCount {
                queries: batch_z.len(),
                assignments: assignments.len(),
            });
        }
        let (k, d) = (self.k(), self.d());
        let mut n = vec![0.0; k];
        let mut s = Tensor::zeros(k, d);
        for (z, &i) in batch_z.iter().zip(assignments) {
            if i >= k {
                return Err(CodebookError::IndexOutOfRange { index: i, k });
            }
            if z.len() != d {
                return Err(CodebookError::Dim {
                    expected: d,
                    got: z.len(),
                });
            }
            n[i] += 1.0;
            for (acc, v) in s.row_mut(i).iter_mut().zip(z) {
                *acc += v;
            }
        }
        let lam = self.decay;
        for i in 0..k {
            self.counts[i] = lam * self.counts[i] + (1.0 - lam) * n[i];
            let denom = self.counts[i].max(COUNT_FLOOR);
            for c in 0..d {
                let m = lam * self.sums.get(i, c) + (1.0 - lam) * s.get(i, c);
                self.sums.set(i, c, m);
                self.entries.set(i, c, m / denom);
            }
        }
        Ok(())
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn param_hash(&self) -> String {
        hash_tensors([&self.entries, &self.sums])
    }
}

/// `ẑ_st = z + sg(ẑ − z)`: forward value is exactly `ẑ`, gradient is the identity.
pub fn straight_through(g: &mut ValueGraph, z: NodeId, zhat: &Tensor) -> Result<NodeId, GraphError> {
    g.straight_through(z, zhat.clone())
}

/// `β1 ‖z − sg(ẑ)‖²`, summed over rows.
pub fn commitment_loss(g: &mut ValueGraph, z: NodeId, zhat: &Tensor, beta1: f64) -> Result<NodeId, GraphError> {
    let target = g.constant(zhat.clone());
    let d = g.sub(z, target)?;
    let d = g.square(d)?;
    let s = g.sum(d)?;
    g.scale(s, beta1)
}

/// Per-code frequencies and `exp(entropy)` of an assignment history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookUsage {
    pub frequencies: Vec<f64>,
    pub perplexity: f64,
}

pub fn codebook_usage(history: &[usize], k: usize) -> Option<CodebookUsage> {
    if history.is_empty() || k == 0 {
        return None;
    }
    let mut freq = vec![0.0; k];
    for &i in history {
        if i < k {
            freq[i] += 1.0;
        }
    }
    let total: f64 = freq.iter().sum();
    if total == 0.0 {
        return None;
    }
    freq.iter_mut().for_each(|f| *f /= total);
    let entropy: f64 = freq.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
    Some(CodebookUsage {
        frequencies: freq,
        perplexity: entropy.exp(),
    })
}
