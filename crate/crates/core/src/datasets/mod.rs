//! Simulated QC measurement tuples: contamination patterns, training sets
//! `T_a(n)` and testing sets `D(n, k, mu, sigma)`.
//!
//! Sets are produced as [`RecordStream`]s. A stream is split into fixed-size
//! chunks and chunk `c` draws from `rng.derive_substream(1 + c)`, so a record's
//! content depends only on the seed and its index, never on how many workers
//! generate it. Training sets additionally carry a shuffled cell plan drawn
//! from `rng.derive_substream(0)`.

mod export;

pub use export::{
    read_binary, read_csv, write_binary, write_csv, DATASET_FORMAT_VERSION, DATASET_MAGIC,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::RngState;
use crate::scalar::Scalar;

/// Largest supported tuple size.
pub const MAX_N: usize = 4;

/// Mix ratios `a` of the in-control share in `T_a(n)`.
pub const MIX_RATIOS: [u32; 8] = [1, 2, 3, 4, 6, 8, 12, 16];

/// Records per generation chunk.
pub const CHUNK_LEN: u64 = 8192;

/// Default upper bound on the number of records in one stream.
pub const DEFAULT_MAX_RECORDS: u64 = 1 << 31;

/// Set of out-of-control positions; bit `i` marks position `i + 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PositionMask(u8);

impl PositionMask {
    pub const EMPTY: PositionMask = PositionMask(0);

    pub fn from_bits(bits: u8) -> Self {
        PositionMask(bits)
    }

    /// From 1-based positions.
    pub fn from_positions(positions: &[usize]) -> Result<Self> {
        let mut bits = 0u8;
        for &p in positions {
            if !(1..=MAX_N).contains(&p) {
                return Err(domain(format!("position {p} outside 1..={MAX_N}")));
            }
            bits |= 1 << (p - 1);
        }
        Ok(PositionMask(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    /// `index` is 0-based.
    #[inline]
    pub fn contains(self, index: usize) -> bool {
        self.0 >> index & 1 == 1
    }

    /// 1-based positions in increasing order.
    pub fn positions(self) -> Vec<usize> {
        (0..8).filter(|&i| self.contains(i)).map(|i| i + 1).collect()
    }

    /// `"0110"`-style string over the first `n` positions.
    pub fn to_bit_string(self, n: usize) -> String {
        (0..n).map(|i| if self.contains(i) { '1' } else { '0' }).collect()
    }

    pub fn parse_bit_string(s: &str) -> Result<Self> {
        if s.len() > MAX_N {
            return Err(domain(format!("mask {s:?} longer than {MAX_N}")));
        }
        let mut bits = 0u8;
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '1' => bits |= 1 << i,
                '0' => {}
                _ => return Err(domain(format!("bad mask character {ch:?} in {s:?}"))),
            }
        }
        Ok(PositionMask(bits))
    }
}

fn check_n(n: usize) -> Result<()> {
    if (1..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(domain(format!("n = {n} outside 1..={MAX_N}")))
    }
}

/// All `C(n, k)` masks with `k` set positions, lexicographic by position list.
pub fn enumerate_patterns(n: usize, k: usize) -> Result<Vec<PositionMask>> {
    check_n(n)?;
    if k > n {
        return Err(domain(format!("k = {k} exceeds n = {n}")));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<PositionMask>) {
        if cur.len() == k {
            out.push(PositionMask::from_positions(cur).expect("positions in range"));
            return;
        }
        for p in start..=n {
            cur.push(p);
            rec(p + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(1, n, k, &mut current, &mut out);
    Ok(out)
}

/// Which positions of an n-tuple are out of control, and how.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationPattern {
    n: usize,
    mask: PositionMask,
    mu: f64,
    sigma: f64,
}

impl ContaminationPattern {
    pub fn new(n: usize, mask: PositionMask, mu: f64, sigma: f64) -> Result<Self> {
        check_n(n)?;
        if mask.bits() >> n != 0 {
            return Err(domain(format!("mask {:#06b} has positions beyond n = {n}", mask.bits())));
        }
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(domain(format!("invalid shift (mu = {mu}, sigma = {sigma})")));
        }
        if mask.count() == 0 {
            if mu != 0.0 || sigma != 1.0 {
                return Err(domain("in-control pattern must have (mu, sigma) = (0, 1)"));
            }
        } else if !(mu.abs() > 0.0 || sigma > 1.0) {
            return Err(domain(format!(
                "out-of-control pattern needs |mu| > 0 or sigma > 1 (mu = {mu}, sigma = {sigma})"
            )));
        }
        Ok(Self { n, mask, mu, sigma })
    }

    pub fn in_control(n: usize) -> Result<Self> {
        Self::new(n, PositionMask::EMPTY, 0.0, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.mask.count()
    }
    pub fn mask(&self) -> PositionMask {
        self.mask
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Ground-truth label: out of control iff any position is contaminated.
pub fn label_tuple(pattern: &ContaminationPattern) -> bool {
    pattern.k() >= 1
}

/// One simulated n-tuple with its label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TupleRecord<S> {
    values: [S; MAX_N],
    pub label: bool,
    pub pattern: ContaminationPattern,
}

impl<S: Scalar> TupleRecord<S> {
    pub fn new(values: &[S], pattern: ContaminationPattern) -> Result<Self> {
        if values.len() != pattern.n() {
            return Err(Error::Shape(format!(
                "{} values for a pattern with n = {}",
                values.len(),
                pattern.n()
            )));
        }
        let mut buf = [S::zero(); MAX_N];
        buf[..values.len()].copy_from_slice(values);
        Ok(Self {
            values: buf,
            label: label_tuple(&pattern),
            pattern,
        })
    }

    pub fn values(&self) -> &[S] {
        &self.values[..self.pattern.n()]
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }
}

/// Draws one tuple: masked positions from `N(mu, sigma^2)`, the rest from `N(0, 1)`.
pub fn generate_tuple<S: Scalar>(pattern: &ContaminationPattern, rng: &mut RngState) -> TupleRecord<S> {
    let mut values = [S::zero(); MAX_N];
    for (i, v) in values.iter_mut().enumerate().take(pattern.n()) {
        let x = if pattern.mask.contains(i) {
            rng.normal(pattern.mu, pattern.sigma)
        } else {
            rng.std_normal()
        };
        *v = S::lit(x);
    }
    TupleRecord {
        values,
        label: label_tuple(pattern),
        pattern: *pattern,
    }
}

/// How records of one cell of a stream are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellKind {
    Fixed(ContaminationPattern),
    /// `N(0, sigma^2)` at the mask, sigma uniform on `(lo, hi]`.
    ScaleShift { mask: PositionMask, lo: f64, hi: f64 },
    /// `N(mu, 1)` at the mask, `|mu|` uniform on `(lo, hi]`, sign equiprobable.
    LocationShift { mask: PositionMask, lo: f64, hi: f64 },
}

impl CellKind {
    fn draw_pattern(&self, n: usize, rng: &mut RngState) -> ContaminationPattern {
        match *self {
            CellKind::Fixed(p) => p,
            CellKind::ScaleShift { mask, lo, hi } => {
                let sigma = hi - (hi - lo) * rng.uniform();
                ContaminationPattern { n, mask, mu: 0.0, sigma }
            }
            CellKind::LocationShift { mask, lo, hi } => {
                let magnitude = hi - (hi - lo) * rng.uniform();
                let mu = if rng.coin() { magnitude } else { -magnitude };
                ContaminationPattern { n, mask, mu, sigma: 1.0 }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Layout {
    /// Explicit per-record cell index.
    Planned(Vec<u8>),
    /// Consecutive blocks of equal length, one per cell.
    Blocks { block_len: u64 },
}

/// A deterministic, chunked, lazily generated sequence of records.
#[derive(Clone, Debug)]
pub struct RecordStream {
    n: usize,
    cells: Vec<CellKind>,
    layout: Layout,
    len: u64,
    rng: RngState,
}

impl RecordStream {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn chunk_count(&self) -> u64 {
        self.len.div_ceil(CHUNK_LEN)
    }

    fn cell_of(&self, index: u64) -> &CellKind {
        let c = match &self.layout {
            Layout::Planned(plan) => plan[index as usize] as usize,
            Layout::Blocks { block_len } => (index / block_len) as usize,
        };
        &self.cells[c]
    }

    /// Records of chunk `chunk`, generated independently of all other chunks.
    pub fn chunk<S: Scalar>(&self, chunk: u64) -> Vec<TupleRecord<S>> {
        let start = chunk * CHUNK_LEN;
        let end = (start + CHUNK_LEN).min(self.len);
        let mut rng = self.rng.derive_substream(1 + chunk);
        (start..end)
            .map(|i| {
                let pattern = self.cell_of(i).draw_pattern(self.n, &mut rng);
                generate_tuple(&pattern, &mut rng)
            })
            .collect()
    }

    /// Sequential iterator over all records.
    pub fn iter<S: Scalar>(&self) -> RecordIter<'_, S> {
        RecordIter {
            stream: self,
            next_chunk: 0,
            buffer: Vec::new().into_iter(),
        }
    }

    /// Materializes the stream using up to `workers` threads; the result is
    /// identical for every worker count.
    pub fn collect_records<S: Scalar>(&self, workers: usize) -> Vec<TupleRecord<S>> {
        use rayon::prelude::*;
        let chunks: Vec<u64> = (0..self.chunk_count()).collect();
        let run = || -> Vec<TupleRecord<S>> {
            chunks
                .par_iter()
                .map(|&c| self.chunk::<S>(c))
                .collect::<Vec<_>>()
                .into_iter()
                .flatten()
                .collect()
        };
        if workers <= 1 {
            chunks.iter().flat_map(|&c| self.chunk::<S>(c)).collect()
        } else {
            crate::with_workers(workers, run)
        }
    }
}

pub struct RecordIter<'a, S> {
    stream: &'a RecordStream,
    next_chunk: u64,
    buffer: std::vec::IntoIter<TupleRecord<S>>,
}

impl<S: Scalar> Iterator for RecordIter<'_, S> {
    type Item = TupleRecord<S>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(r) = self.buffer.next() {
                return Some(r);
            }
            if self.next_chunk >= self.stream.chunk_count() {
                return None;
            }
            self.buffer = self.stream.chunk(self.next_chunk).into_iter();
            self.next_chunk += 1;
        }
    }
}

/// Composition of `T_a(n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetSpec {
    pub a: u32,
    pub n: usize,
    /// Base block size; `10^5` reproduces the published sizes.
    pub unit: u64,
    /// sigma is drawn from `(lo, hi]`.
    pub sigma_range: (f64, f64),
    /// `|mu|` is drawn from `(lo, hi]`.
    pub mu_magnitude_range: (f64, f64),
    pub max_records: u64,
}

/// Record counts of a training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingComposition {
    pub in_control: u64,
    pub scale_shift: u64,
    pub location_shift: u64,
    /// `(k, mask, count)` within each shifted block, same for both blocks.
    pub cells: Vec<(usize, String, u64)>,
}

impl TrainingComposition {
    pub fn total(&self) -> u64 {
        self.in_control + self.scale_shift + self.location_shift
    }
}

impl TrainingSetSpec {
    pub fn new(a: u32, n: usize, unit: u64) -> Self {
        Self {
            a,
            n,
            unit,
            sigma_range: (1.0, 11.0),
            mu_magnitude_range: (0.0, 10.0),
            max_records: DEFAULT_MAX_RECORDS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_n(self.n)?;
        if !MIX_RATIOS.contains(&self.a) {
            return Err(domain(format!("a = {} not in {MIX_RATIOS:?}", self.a)));
        }
        if self.unit == 0 {
            return Err(domain("unit must be positive"));
        }
        let (slo, shi) = self.sigma_range;
        if !(slo >= 1.0 && shi > slo && shi.is_finite()) {
            return Err(domain(format!("sigma range ({slo}, {shi}] invalid")));
        }
        let (mlo, mhi) = self.mu_magnitude_range;
        if !(mlo >= 0.0 && mhi > mlo && mhi.is_finite()) {
            return Err(domain(format!("|mu| range ({mlo}, {mhi}] invalid")));
        }
        Ok(())
    }

    /// Shifted cells `(k, mask)` for `k = 1..=n`, in order.
    fn shifted_masks(&self) -> Vec<PositionMask> {
        (1..=self.n)
            .flat_map(|k| enumerate_patterns(self.n, k).expect("validated n"))
            .collect()
    }

    pub fn composition(&self) -> Result<TrainingComposition> {
        self.validate()?;
        let overflow = || Error::Overflow {
            requested: u64::MAX,
            limit: self.max_records,
        };
        let block = (1u64 << (self.n - 1)).checked_mul(self.unit).ok_or_else(overflow)?;
        let in_control = block.checked_mul(self.a as u64).ok_or_else(overflow)?;
        let total = in_control.checked_add(2 * block).ok_or_else(overflow)?;
        if total > self.max_records {
            return Err(Error::Overflow {
                requested: total,
                limit: self.max_records,
            });
        }
        let masks = self.shifted_masks();
        let cells = masks.len() as u64;
        let (base, rem) = (block / cells, block % cells);
        let cells = masks
            .iter()
            .enumerate()
            .map(|(i, m)| (m.count(), m.to_bit_string(self.n), base + u64::from((i as u64) < rem)))
            .collect();
        Ok(TrainingComposition {
            in_control,
            scale_shift: block,
            location_shift: block,
            cells,
        })
    }
}

/// Builds the training set stream: in-control, scale-shift and
/// location-shift records in a seeded random order.
pub fn build_training_set(spec: &TrainingSetSpec, rng: &RngState) -> Result<RecordStream> {
    let comp = spec.composition()?;
    let masks = spec.shifted_masks();
    let mut cells = vec![CellKind::Fixed(ContaminationPattern::in_control(spec.n)?)];
    let (slo, shi) = spec.sigma_range;
    let (mlo, mhi) = spec.mu_magnitude_range;
    cells.extend(masks.iter().map(|&mask| CellKind::ScaleShift { mask, lo: slo, hi: shi }));
    cells.extend(masks.iter().map(|&mask| CellKind::LocationShift { mask, lo: mlo, hi: mhi }));

    let mut plan = Vec::with_capacity(comp.total() as usize);
    plan.extend(std::iter::repeat_n(0u8, comp.in_control as usize));
    for block in 0..2 {
        for (i, (_, _, count)) in comp.cells.iter().enumerate() {
            let id = 1 + block * masks.len() + i;
            plan.extend(std::iter::repeat_n(id as u8, *count as usize));
        }
    }
    rng.derive_substream(0).shuffle(&mut plan);
    Ok(RecordStream {
        n: spec.n,
        cells,
        len: plan.len() as u64,
        layout: Layout::Planned(plan),
        rng: rng.clone(),
    })
}

/// Layout of one testing set `D(n, 0, 1)` or `D(n, k, mu, sigma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSetSpec {
    pub n: usize,
    pub k: usize,
    pub mu: f64,
    pub sigma: f64,
    /// Tuples per position mask when `k >= 1`.
    pub replicates_per_pattern: u64,
    /// Size of the in-control set when `k = 0`.
    pub in_control_count: u64,
    pub max_records: u64,
}

pub const DEFAULT_REPLICATES: u64 = 100_000;
pub const DEFAULT_IN_CONTROL_COUNT: u64 = 1_000_000;

impl TestSetSpec {
    pub fn shifted(n: usize, k: usize, mu: f64, sigma: f64) -> Self {
        Self {
            n,
            k,
            mu,
            sigma,
            replicates_per_pattern: DEFAULT_REPLICATES,
            in_control_count: DEFAULT_IN_CONTROL_COUNT,
            max_records: DEFAULT_MAX_RECORDS,
        }
    }

    pub fn in_control(n: usize) -> Self {
        Self::shifted(n, 0, 0.0, 1.0)
    }

    pub fn with_replicates(mut self, replicates: u64) -> Self {
        self.replicates_per_pattern = replicates;
        self
    }

    pub fn with_in_control_count(mut self, count: u64) -> Self {
        self.in_control_count = count;
        self
    }

    pub fn masks(&self) -> Result<Vec<PositionMask>> {
        enumerate_patterns(self.n, self.k)
    }

    pub fn total(&self) -> Result<u64> {
        let masks = self.masks()?;
        let total = if self.k == 0 {
            self.in_control_count
        } else {
            (masks.len() as u64)
                .checked_mul(self.replicates_per_pattern)
                .ok_or(Error::Overflow {
                    requested: u64::MAX,
                    limit: self.max_records,
                })?
        };
        if total > self.max_records {
            return Err(Error::Overflow {
                requested: total,
                limit: self.max_records,
            });
        }
        Ok(total)
    }
}

/// Builds a testing set stream, one contiguous block per position mask.
pub fn build_test_set(spec: &TestSetSpec, rng: &RngState) -> Result<RecordStream> {
    let masks = spec.masks()?;
    let total = spec.total()?;
    if total == 0 {
        return Err(domain("testing set must contain at least one record"));
    }
    let cells = masks
        .iter()
        .map(|&m| ContaminationPattern::new(spec.n, m, spec.mu, spec.sigma).map(CellKind::Fixed))
        .collect::<Result<Vec<_>>>()?;
    let block_len = if spec.k == 0 {
        total
    } else {
        spec.replicates_per_pattern
    };
    Ok(RecordStream {
        n: spec.n,
        cells,
        layout: Layout::Blocks { block_len },
        len: total,
        rng: rng.clone(),
    })
}
