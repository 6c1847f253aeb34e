//! Finite probability spaces, partitions standing in for sub-sigma-algebras,
//! random variables/vectors and conditional expectation.
//!
//! Atoms are indexed `0..n`. A sub-sigma-algebra `G` of the power set is
//! represented by the partition generating it; a random variable is
//! `G`-measurable iff it is constant on every block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for probability normalisation and block constancy.
pub const EQ_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FiniteProbSpace {
    probs: Vec<f64>,
}

impl FiniteProbSpace {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0))
        {
            return Err(Error::InvalidSpace(format!(
                "atom {i} has non-positive or non-finite probability {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > EQ_TOL * probs.len().max(1) as f64 {
            return Err(Error::InvalidSpace(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform space needs at least one atom");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, atom: usize) -> f64 {
        self.probs[atom]
    }

    pub fn expectation(&self, f: &RandomVariable) -> f64 {
        self.probs.iter().zip(f.values()).map(|(p, v)| p * v).sum()
    }

    pub fn check_variable(&self, f: &RandomVariable) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "random variable has {} atoms, space has {}",
                f.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn check_vector(&self, x: &RandomVector) -> Result<()> {
        if x.atoms() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "random vector has {} rows, space has {} atoms",
                x.atoms(),
                self.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for FiniteProbSpace {
    type Error = Error;
    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<FiniteProbSpace> for Vec<f64> {
    fn from(value: FiniteProbSpace) -> Self {
        value.probs
    }
}

/// A disjoint cover of the atoms. Each block is stored sorted; block order is
/// kept as given, equality ignores it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    blocks: Vec<Vec<usize>>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;
    fn try_from(value: PartitionRepr) -> Result<Self> {
        let n = value.blocks.iter().map(Vec::len).sum();
        Partition::new(n, value.blocks)
    }
}

impl From<Partition> for PartitionRepr {
    fn from(value: Partition) -> Self {
        PartitionRepr {
            blocks: value.blocks,
        }
    }
}

impl Partition {
    pub fn new(n_atoms: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut block_of = vec![usize::MAX; n_atoms];
        let mut sorted = Vec::with_capacity(blocks.len());
        for (b, mut block) in blocks.into_iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidPartition(format!("block {b} is empty")));
            }
            block.sort_unstable();
            for &atom in &block {
                if atom >= n_atoms {
                    return Err(Error::InvalidPartition(format!(
                        "atom {atom} out of range for {n_atoms} atoms"
                    )));
                }
                if block_of[atom] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "atom {atom} appears in more than one block"
                    )));
                }
                block_of[atom] = b;
            }
            sorted.push(block);
        }
        if let Some(atom) = block_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::InvalidPartition(format!("atom {atom} is not covered")));
        }
        Ok(Self {
            blocks: sorted,
            block_of,
        })
    }

    /// The one-block partition (unconditional case).
    pub fn trivial(n_atoms: usize) -> Self {
        Self {
            blocks: vec![(0..n_atoms).collect()],
            block_of: vec![0; n_atoms],
        }
    }

    /// Every atom in its own block (full information).
    pub fn discrete(n_atoms: usize) -> Self {
        Self {
            blocks: (0..n_atoms).map(|i| vec![i]).collect(),
            block_of: (0..n_atoms).collect(),
        }
    }

    /// `sigma(A) = {A, A^c}`; trivial when `A` is empty or everything.
    pub fn sigma_of_event(n_atoms: usize, event: &[usize]) -> Result<Self> {
        let mut inside = vec![false; n_atoms];
        for &a in event {
            if a >= n_atoms {
                return Err(Error::InvalidPartition(format!(
                    "event atom {a} out of range for {n_atoms} atoms"
                )));
            }
            inside[a] = true;
        }
        let a: Vec<usize> = (0..n_atoms).filter(|&i| inside[i]).collect();
        let complement: Vec<usize> = (0..n_atoms).filter(|&i| !inside[i]).collect();
        if a.is_empty() || complement.is_empty() {
            return Ok(Self::trivial(n_atoms));
        }
        Self::new(n_atoms, vec![a, complement])
    }

    pub fn atoms(&self) -> usize {
        self.block_of.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    pub fn block_of(&self, atom: usize) -> usize {
        self.block_of[atom]
    }

    /// True iff every block of `self` lies inside one block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.atoms() == coarser.atoms()
            && self.blocks.iter().all(|block| {
                let target = coarser.block_of(block[0]);
                block.iter().all(|&a| coarser.block_of(a) == target)
            })
    }

    /// True iff `f` is constant (within [`EQ_TOL`]) on every block.
    pub fn is_measurable(&self, f: &RandomVariable) -> bool {
        f.len() == self.atoms()
            && self.blocks.iter().all(|block| {
                let first = f[block[0]];
                block.iter().all(|&a| (f[a] - first).abs() <= EQ_TOL)
            })
    }

    /// Row-wise measurability of a random vector.
    pub fn is_measurable_vector(&self, x: &RandomVector) -> bool {
        x.atoms() == self.atoms()
            && self.blocks.iter().all(|block| {
                let first = x.row(block[0]);
                block.iter().all(|&a| {
                    x.row(a)
                        .iter()
                        .zip(first)
                        .all(|(u, v)| (u - v).abs() <= EQ_TOL)
                })
            })
    }

    fn canonical(&self) -> Vec<&Vec<usize>> {
        let mut blocks: Vec<&Vec<usize>> = self.blocks.iter().collect();
        blocks.sort();
        blocks
    }
}

impl PartialEq for Partition {
    fn eq(&self, other: &Self) -> bool {
        self.atoms() == other.atoms() && self.canonical() == other.canonical()
    }
}

/// A real-valued random variable: one value per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomVariable(Vec<f64>);

impl RandomVariable {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len(), "random variables on different spaces");
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for RandomVariable {
    type Output = f64;
    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

impl From<Vec<f64>> for RandomVariable {
    fn from(value: Vec<f64>) -> Self {
        Self(value)
    }
}

/// An `atoms x d` matrix of per-institution outcomes, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RandomVector {
    atoms: usize,
    dim: usize,
    data: Vec<f64>,
}

impl RandomVector {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let atoms = rows.len();
        if atoms == 0 {
            return Err(Error::DimensionMismatch("random vector has no rows".into()));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::DimensionMismatch("random vector has zero columns".into()));
        }
        let mut data = Vec::with_capacity(atoms * dim);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(format!("non-finite entry {v} in row {i}")));
            }
            data.extend(row);
        }
        Ok(Self { atoms, dim, data })
    }

    pub fn from_flat(atoms: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), atoms * dim, "flat data has wrong length");
        Self { atoms, dim, data }
    }

    /// The deterministic vector `x` viewed as a random vector on `atoms` atoms.
    pub fn constant(atoms: usize, x: &[f64]) -> Self {
        let mut data = Vec::with_capacity(atoms * x.len());
        for _ in 0..atoms {
            data.extend_from_slice(x);
        }
        Self {
            atoms,
            dim: x.len(),
            data,
        }
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, atom: usize) -> &[f64] {
        &self.data[atom * self.dim..(atom + 1) * self.dim]
    }

    pub fn row_mut(&mut self, atom: usize) -> &mut [f64] {
        &mut self.data[atom * self.dim..(atom + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn column(&self, j: usize) -> RandomVariable {
        RandomVariable((0..self.atoms).map(|i| self.data[i * self.dim + j]).collect())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Keeps only the listed atoms, in the given order.
    pub fn restrict(&self, atoms: &[usize]) -> Self {
        let mut data = Vec::with_capacity(atoms.len() * self.dim);
        for &a in atoms {
            data.extend_from_slice(self.row(a));
        }
        Self {
            atoms: atoms.len(),
            dim: self.dim,
            data,
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for RandomVector {
    type Error = Error;
    fn try_from(value: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(value)
    }
}

impl From<RandomVector> for Vec<Vec<f64>> {
    fn from(value: RandomVector) -> Self {
        value.to_rows()
    }
}

/// JSON document `{"probs": [...], "values": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceDocument {
    pub probs: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SpaceDocument {
    pub fn new(space: &FiniteProbSpace, x: &RandomVector) -> Self {
        Self {
            probs: space.probs().to_vec(),
            values: x.to_rows(),
        }
    }

    pub fn into_parts(self) -> Result<(FiniteProbSpace, RandomVector)> {
        let space = FiniteProbSpace::new(self.probs)?;
        let x = RandomVector::from_rows(self.values)?;
        space.check_vector(&x)?;
        Ok((space, x))
    }
}

/// `E_Q[F | G]` with `dQ/dP = density` (omitted means `Q = P`).
///
/// On block `B` the value is `sum p*den*F / sum p*den` over `B`.
pub fn conditional_expectation(
    space: &FiniteProbSpace,
    f: &RandomVariable,
    partition: &Partition,
    density: Option<&RandomVariable>,
) -> Result<RandomVariable> {
    space.check_variable(f)?;
    if partition.atoms() != space.len() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} atoms, space has {}",
            partition.atoms(),
            space.len()
        )));
    }
    if let Some(den) = density {
        check_density(space, den)?;
    }
    let weight = |a: usize| space.prob(a) * density.map_or(1.0, |d| d[a]);
    let mut out = vec![0.0; space.len()];
    for (b, block) in partition.blocks().iter().enumerate() {
        let mass: f64 = block.iter().map(|&a| weight(a)).sum();
        if mass <= 0.0 {
            return Err(Error::ZeroBlockMass { block: b });
        }
        let value = block.iter().map(|&a| weight(a) * f[a]).sum::<f64>() / mass;
        for &a in block {
            out[a] = value;
        }
    }
    Ok(RandomVariable(out))
}

/// A Radon-Nikodym density must be nonnegative with `E_P[den] = 1`.
pub fn check_density(space: &FiniteProbSpace, den: &RandomVariable) -> Result<()> {
    space.check_variable(den)?;
    if let Some(v) = den.values().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidParams(format!("density has invalid entry {v}")));
    }
    let mean = space.expectation(den);
    if (mean - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParams(format!(
            "density has expectation {mean}, expected 1"
        )));
    }
    Ok(())
}
