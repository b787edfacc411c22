//! Synthetic stand-in for the retinal cohort.
//!
//! Each record is drawn from a ground-truth factor model: a subgroup-specific
//! pigment value, a lesion intensity determined by disease severity, and an
//! eight-dimensional nuisance vector. The ten factors are mixed into a
//! 64-dimensional observation through a matrix with orthonormal columns, so in
//! linear mode the factors can be recovered exactly up to observation noise.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, parse_field, Table};
use crate::error::{Error, Result};
use crate::ndcore::{Rng, Tensor};
use crate::weights::WeightsFile;

pub const FEATURE_DIM: usize = 64;
pub const NUISANCE_DIM: usize = 8;
pub const FACTOR_DIM: usize = 2 + NUISANCE_DIM;

/// Factor vector layout: `[pigment, lesion, nuisance_0..7]`.
pub const PIGMENT: usize = 0;
pub const LESION: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subgroup {
    #[serde(rename = "C")]
    Caucasian,
    #[serde(rename = "AA")]
    AfricanAmerican,
}

impl Subgroup {
    pub const ALL: [Subgroup; 2] = [Subgroup::Caucasian, Subgroup::AfricanAmerican];

    pub fn code(self) -> &'static str {
        match self {
            Subgroup::Caucasian => "C",
            Subgroup::AfricanAmerican => "AA",
        }
    }

    pub fn from_code(s: &str) -> Option<Subgroup> {
        match s {
            "C" => Some(Subgroup::Caucasian),
            "AA" => Some(Subgroup::AfricanAmerican),
            _ => None,
        }
    }

    /// Binary target used by subgroup classifiers (AfricanAmerican = 1).
    pub fn as_target(self) -> f64 {
        match self {
            Subgroup::Caucasian => 0.0,
            Subgroup::AfricanAmerican => 1.0,
        }
    }

    pub fn from_target(t: u8) -> Subgroup {
        if t == 1 {
            Subgroup::AfricanAmerican
        } else {
            Subgroup::Caucasian
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

impl Source {
    pub fn code(self) -> &'static str {
        match self {
            Source::Real => "real",
            Source::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorRecord {
    pub id: u64,
    pub subgroup: Subgroup,
    pub pigment: f64,
    pub severity: u8,
    pub lesion: f64,
    pub nuisance: [f64; NUISANCE_DIM],
    pub label: u8,
}

impl FactorRecord {
    pub fn factors(&self) -> [f64; FACTOR_DIM] {
        let mut f = [0.0; FACTOR_DIM];
        f[PIGMENT] = self.pigment;
        f[LESION] = self.lesion;
        f[2..].copy_from_slice(&self.nuisance);
        f
    }
}

/// Where a synthetic record came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub starter_id: u64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: u64,
    pub subgroup: Subgroup,
    /// 1..=4 for real records; 0 when unknown (synthetic).
    pub severity: u8,
    pub label: u8,
    pub source: Source,
    pub x: Vec<f64>,
    pub provenance: Option<Provenance>,
}

/// Counts per (subgroup x label) cell of one partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellTable {
    pub c_healthy: usize,
    pub c_amd: usize,
    pub aa_healthy: usize,
    pub aa_amd: usize,
}

impl CellTable {
    pub fn get(&self, subgroup: Subgroup, label: u8) -> usize {
        match (subgroup, label) {
            (Subgroup::Caucasian, 0) => self.c_healthy,
            (Subgroup::Caucasian, _) => self.c_amd,
            (Subgroup::AfricanAmerican, 0) => self.aa_healthy,
            (Subgroup::AfricanAmerican, _) => self.aa_amd,
        }
    }

    pub fn set(&mut self, subgroup: Subgroup, label: u8, n: usize) {
        match (subgroup, label) {
            (Subgroup::Caucasian, 0) => self.c_healthy = n,
            (Subgroup::Caucasian, _) => self.c_amd = n,
            (Subgroup::AfricanAmerican, 0) => self.aa_healthy = n,
            (Subgroup::AfricanAmerican, _) => self.aa_amd = n,
        }
    }

    pub fn total(&self) -> usize {
        self.c_healthy + self.c_amd + self.aa_healthy + self.aa_amd
    }

    /// Cells in a fixed order: C-healthy, C-AMD, AA-healthy, AA-AMD.
    pub fn cells() -> [(Subgroup, u8); 4] {
        [
            (Subgroup::Caucasian, 0),
            (Subgroup::Caucasian, 1),
            (Subgroup::AfricanAmerican, 0),
            (Subgroup::AfricanAmerican, 1),
        ]
    }

    pub fn scaled_down(&self, factor: usize) -> CellTable {
        CellTable {
            c_healthy: self.c_healthy / factor,
            c_amd: self.c_amd / factor,
            aa_healthy: self.aa_healthy / factor,
            aa_amd: self.aa_amd / factor,
        }
    }

    pub fn of(records: &[FeatureRecord]) -> CellTable {
        let mut t = CellTable::default();
        for r in records {
            let n = t.get(r.subgroup, r.label);
            t.set(r.subgroup, r.label, n + 1);
        }
        t
    }

    pub fn paper_train() -> CellTable {
        CellTable {
            c_healthy: 1843,
            c_amd: 1843,
            aa_healthy: 3686,
            aa_amd: 0,
        }
    }

    pub fn paper_test() -> CellTable {
        CellTable {
            c_healthy: 77,
            c_amd: 77,
            aa_healthy: 77,
            aa_amd: 77,
        }
    }
}

pub fn cell_name(subgroup: Subgroup, label: u8) -> String {
    format!("{}-{}", subgroup.code(), if label == 1 { "AMD" } else { "healthy" })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellCounts {
    pub train: CellTable,
    pub test: CellTable,
    pub leftover: CellTable,
}

pub const DESK_SCALE: usize = 16;

/// Desk-scale experiment: paper training counts divided by 16, 32 test
/// records per cell and 96 leftover AfricanAmerican-AMD records.
pub fn default_experiment_cells() -> CellCounts {
    CellCounts {
        train: CellTable::paper_train().scaled_down(DESK_SCALE),
        test: CellTable {
            c_healthy: 32,
            c_amd: 32,
            aa_healthy: 32,
            aa_amd: 32,
        },
        leftover: CellTable {
            aa_amd: 96,
            ..CellTable::default()
        },
    }
}

/// Parameters of the factor model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorConfig {
    pub pigment_base_c: f64,
    pub pigment_base_aa: f64,
    pub pigment_jitter: f64,
    /// Lesion intensity for severities 1..=4.
    pub lesion_map: [f64; 4],
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig {
            pigment_base_c: -1.0,
            pigment_base_aa: 1.0,
            pigment_jitter: 0.1,
            lesion_map: [0.0, 0.3, 1.0, 1.5],
        }
    }
}

impl FactorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pigment_base_c >= 0.0 || self.pigment_base_aa <= 0.0 {
            return Err(Error::Config("pigment bases must be negative (C) and positive (AA)".into()));
        }
        if !(0.0..self.pigment_base_aa.min(-self.pigment_base_c)).contains(&self.pigment_jitter) {
            return Err(Error::Config("pigment jitter must be smaller than the pigment bases".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixingConfig {
    pub noise: f64,
    pub offset_scale: f64,
    pub nonlinear: bool,
}

impl Default for MixingConfig {
    fn default() -> Self {
        MixingConfig {
            noise: 0.05,
            offset_scale: 0.5,
            nonlinear: false,
        }
    }
}

/// Linear map from the 10 factors to the 64-dim observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingModel {
    /// `64 x 10`, orthonormal columns.
    pub matrix: Tensor,
    pub offset: Vec<f64>,
    pub noise: f64,
    pub nonlinear: bool,
}

impl MixingModel {
    /// Orthonormalizes a seeded Gaussian `64 x 10` matrix (QR via two passes
    /// of modified Gram-Schmidt).
    pub fn new(cfg: &MixingConfig, rng: &mut Rng) -> Result<MixingModel> {
        if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
            return Err(Error::Config(format!("mixing noise must be >= 0, got {}", cfg.noise)));
        }
        let mut cols: Vec<Vec<f64>> = (0..FACTOR_DIM).map(|_| rng.normals(FEATURE_DIM)).collect();
        for _ in 0..2 {
            for j in 0..FACTOR_DIM {
                for k in 0..j {
                    let d = dot(&cols[j], &cols[k]);
                    let prev = cols[k].clone();
                    for (a, b) in cols[j].iter_mut().zip(&prev) {
                        *a -= d * b;
                    }
                }
                let n = dot(&cols[j], &cols[j]).sqrt();
                cols[j].iter_mut().for_each(|v| *v /= n);
            }
        }
        let mut data = vec![0.0; FEATURE_DIM * FACTOR_DIM];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * FACTOR_DIM + j] = *v;
            }
        }
        let offset = rng
            .normals(FEATURE_DIM)
            .into_iter()
            .map(|v| v * cfg.offset_scale)
            .collect();
        Ok(MixingModel {
            matrix: Tensor::matrix(FEATURE_DIM, FACTOR_DIM, data)?,
            offset,
            noise: cfg.noise,
            nonlinear: cfg.nonlinear,
        })
    }

    /// Noise-free observation of a factor vector.
    pub fn mix_clean(&self, f: &[f64; FACTOR_DIM]) -> Vec<f64> {
        (0..FEATURE_DIM)
            .map(|i| {
                let lin: f64 = self.matrix.row(i).iter().zip(f).map(|(m, v)| m * v).sum();
                let lin = if self.nonlinear { lin + 0.3 * lin * lin } else { lin };
                lin + self.offset[i]
            })
            .collect()
    }

    pub fn mix(&self, f: &[f64; FACTOR_DIM], rng: &mut Rng) -> Vec<f64> {
        let mut x = self.mix_clean(f);
        for v in &mut x {
            *v += self.noise * rng.normal();
        }
        x
    }

    pub fn to_weights(&self) -> WeightsFile {
        let mut store = crate::ndcore::ParamStore::new();
        store.add("matrix", self.matrix.clone());
        store.add("offset", Tensor::vector(self.offset.clone()));
        WeightsFile::from_store("mixing", &store)
            .with_meta("noise", self.noise.into())
            .with_meta("nonlinear", self.nonlinear.into())
    }

    pub fn from_weights(w: &WeightsFile) -> Result<MixingModel> {
        w.expect_kind("mixing")?;
        let layers = w.tensors()?;
        let find = |name: &str| {
            layers
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Validation(format!("mixing file missing layer {name}")))
        };
        Ok(MixingModel {
            matrix: find("matrix")?,
            offset: find("offset")?.into_data(),
            noise: w.meta("noise")?.as_f64().unwrap_or(0.0),
            nonlinear: w.meta("nonlinear")?.as_bool().unwrap_or(false),
        })
    }
}

/// Least-squares factor estimate `M^T (x - b)`; exact in linear mode because
/// the columns of `M` are orthonormal.
pub fn recover_factors(x: &[f64], mixing: &MixingModel) -> Result<[f64; FACTOR_DIM]> {
    if mixing.nonlinear {
        return Err(Error::UnsupportedMode(
            "factor recovery requires the linear mixing mode".into(),
        ));
    }
    if x.len() != FEATURE_DIM {
        return Err(Error::Dimension {
            op: "recover_factors",
            lhs: vec![FEATURE_DIM],
            rhs: vec![x.len()],
        });
    }
    let mut f = [0.0; FACTOR_DIM];
    for i in 0..FEATURE_DIM {
        let d = x[i] - mixing.offset[i];
        for (j, fj) in f.iter_mut().enumerate() {
            *fj += mixing.matrix.get(i, j) * d;
        }
    }
    Ok(f)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Records of one partition with their ground-truth factors (same order).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<FeatureRecord>,
    pub factors: Vec<FactorRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cells(&self) -> CellTable {
        CellTable::of(&self.records)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub train: Dataset,
    pub test: Dataset,
    pub leftover: Dataset,
}

fn draw_factors(id: u64, subgroup: Subgroup, label: u8, cfg: &FactorConfig, rng: &mut Rng) -> FactorRecord {
    let base = match subgroup {
        Subgroup::Caucasian => cfg.pigment_base_c,
        Subgroup::AfricanAmerican => cfg.pigment_base_aa,
    };
    let pigment = base + rng.uniform_range(-cfg.pigment_jitter, cfg.pigment_jitter);
    let severity = if label == 1 { 3 } else { 1 } + rng.below(2) as u8;
    let lesion = cfg.lesion_map[severity as usize - 1];
    let mut nuisance = [0.0; NUISANCE_DIM];
    for v in &mut nuisance {
        *v = rng.normal();
    }
    FactorRecord {
        id,
        subgroup,
        pigment,
        severity,
        lesion,
        nuisance,
        label,
    }
}

/// Generates one partition with exactly the requested count per cell.
/// Ids are assigned sequentially from `first_id`.
pub fn gen_partition(
    cells: &CellTable,
    mixing: &MixingModel,
    factor_cfg: &FactorConfig,
    first_id: u64,
    rng: &mut Rng,
) -> Dataset {
    let mut ds = Dataset::default();
    let mut id = first_id;
    for (subgroup, label) in CellTable::cells() {
        for _ in 0..cells.get(subgroup, label) {
            let f = draw_factors(id, subgroup, label, factor_cfg, rng);
            let x = mixing.mix(&f.factors(), rng);
            ds.records.push(FeatureRecord {
                id,
                subgroup,
                severity: f.severity,
                label,
                source: Source::Real,
                x,
                provenance: None,
            });
            ds.factors.push(f);
            id += 1;
        }
    }
    ds
}

/// Train, test and leftover partitions with disjoint ids, each drawn from its
/// own rng stream forked from `rng`.
pub fn gen_population(cells: &CellCounts, mixing: &MixingModel, factor_cfg: &FactorConfig, rng: &Rng) -> Cohort {
    let train = gen_partition(&cells.train, mixing, factor_cfg, 0, &mut rng.fork(rng.stream() + 1));
    let next = cells.train.total() as u64;
    let test = gen_partition(&cells.test, mixing, factor_cfg, next, &mut rng.fork(rng.stream() + 2));
    let next = next + cells.test.total() as u64;
    let leftover = gen_partition(&cells.leftover, mixing, factor_cfg, next, &mut rng.fork(rng.stream() + 3));
    Cohort {
        train,
        test,
        leftover,
    }
}

pub fn dataset_header() -> Vec<String> {
    let mut h: Vec<String> = ["id", "subgroup", "severity", "label", "source"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..FEATURE_DIM).map(|i| format!("x{i}")));
    h
}

pub fn records_to_table(records: &[FeatureRecord]) -> Table {
    let mut t = Table::new(dataset_header());
    for r in records {
        let mut row = vec![
            r.id.to_string(),
            r.subgroup.code().to_string(),
            r.severity.to_string(),
            r.label.to_string(),
            r.source.code().to_string(),
        ];
        row.extend(r.x.iter().map(|v| fmt_f64(*v)));
        t.push(row);
    }
    t
}

pub fn write_dataset(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    records_to_table(records).write(path)
}

pub fn read_dataset(path: &Path) -> Result<Vec<FeatureRecord>> {
    let t = Table::read(path)?;
    if t.header != dataset_header() {
        return Err(Error::Csv {
            path: path.into(),
            detail: "unexpected dataset header".into(),
        });
    }
    t.rows
        .iter()
        .map(|row| {
            let subgroup = Subgroup::from_code(&row[1]).ok_or_else(|| Error::Csv {
                path: path.into(),
                detail: format!("unknown subgroup {:?}", row[1]),
            })?;
            let label: u8 = parse_field(&row[3], "label", path)?;
            if label > 1 {
                return Err(Error::Csv {
                    path: path.into(),
                    detail: format!("label {label} not in {{0,1}}"),
                });
            }
            let source = match row[4].as_str() {
                "real" => Source::Real,
                "synthetic" => Source::Synthetic,
                other => {
                    return Err(Error::Csv {
                        path: path.into(),
                        detail: format!("unknown source {other:?}"),
                    })
                }
            };
            let x = row[5..]
                .iter()
                .map(|v| parse_field::<f64>(v, "feature", path))
                .collect::<Result<Vec<_>>>()?;
            Ok(FeatureRecord {
                id: parse_field(&row[0], "id", path)?,
                subgroup,
                severity: parse_field(&row[2], "severity", path)?,
                label,
                source,
                x,
                provenance: None,
            })
        })
        .collect()
}

pub fn factors_header() -> Vec<String> {
    let mut h: Vec<String> = ["id", "pigment", "lesion"].iter().map(|s| s.to_string()).collect();
    h.extend((0..NUISANCE_DIM).map(|i| format!("v{i}")));
    h
}

pub fn write_factors(path: &Path, factors: &[FactorRecord]) -> Result<()> {
    let mut t = Table::new(factors_header());
    for f in factors {
        let mut row = vec![f.id.to_string(), fmt_f64(f.pigment), fmt_f64(f.lesion)];
        row.extend(f.nuisance.iter().map(|v| fmt_f64(*v)));
        t.push(row);
    }
    t.write(path)
}

/// Reads `(id, [pigment, lesion, v0..v7])` rows.
pub fn read_factors(path: &Path) -> Result<Vec<(u64, [f64; FACTOR_DIM])>> {
    let t = Table::read(path)?;
    if t.header != factors_header() {
        return Err(Error::Csv {
            path: path.into(),
            detail: "unexpected factors header".into(),
        });
    }
    t.rows
        .iter()
        .map(|row| {
            let mut f = [0.0; FACTOR_DIM];
            for (j, v) in row[1..].iter().enumerate() {
                f[j] = parse_field(v, "factor", path)?;
            }
            Ok((parse_field(&row[0], "id", path)?, f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mixing(noise: f64) -> MixingModel {
        let cfg = MixingConfig {
            noise,
            ..MixingConfig::default()
        };
        MixingModel::new(&cfg, &mut Rng::new(42, 0)).unwrap()
    }

    #[test]
    fn columns_are_orthonormal() {
        let m = mixing(0.05);
        let mt = m.matrix.transpose();
        let g = mt.matmul(&m.matrix).unwrap();
        for i in 0..FACTOR_DIM {
            for j in 0..FACTOR_DIM {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g.get(i, j), want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn desk_defaults() {
        let c = default_experiment_cells();
        assert_eq!(
            c.train,
            CellTable {
                c_healthy: 115,
                c_amd: 115,
                aa_healthy: 230,
                aa_amd: 0
            }
        );
        assert_eq!(c.test.total(), 128);
        assert_eq!(c.leftover.aa_amd, 96);
        assert_eq!(c.leftover.total(), 96);
        assert_eq!(CellTable::paper_test().get(Subgroup::AfricanAmerican, 1), 77);
    }

    #[test]
    fn exact_cell_counts_and_invariants() {
        let m = mixing(0.05);
        let cells = default_experiment_cells();
        let cohort = gen_population(&cells, &m, &FactorConfig::default(), &Rng::new(42, 10));
        assert_eq!(cohort.train.cells(), cells.train);
        assert_eq!(cohort.test.cells(), cells.test);
        assert_eq!(cohort.leftover.cells(), cells.leftover);
        for f in cohort.train.factors.iter().chain(&cohort.test.factors) {
            assert_eq!(f.label == 1, f.severity >= 3);
            assert_eq!(f.pigment > 0.0, f.subgroup == Subgroup::AfricanAmerican);
        }
        let mut ids: Vec<u64> = [&cohort.train, &cohort.test, &cohort.leftover]
            .iter()
            .flat_map(|d| d.records.iter().map(|r| r.id))
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn zero_counts_give_empty_dataset() {
        let m = mixing(0.05);
        let ds = gen_partition(&CellTable::default(), &m, &FactorConfig::default(), 0, &mut Rng::new(1, 1));
        assert!(ds.is_empty());
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let m = mixing(0.0);
        let mut rng = Rng::new(5, 5);
        for _ in 0..20 {
            let f = draw_factors(0, Subgroup::AfricanAmerican, 1, &FactorConfig::default(), &mut rng);
            let x = m.mix(&f.factors(), &mut rng);
            let back = recover_factors(&x, &m).unwrap();
            for (a, b) in back.iter().zip(f.factors()) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn offset_recovers_to_zero() {
        let m = mixing(0.05);
        let back = recover_factors(&m.offset, &m).unwrap();
        assert!(back.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn noisy_recovery_rms() {
        let m = mixing(0.05);
        let mut rng = Rng::new(42, 3);
        let mut sq = [0.0; FACTOR_DIM];
        let n = 1000;
        for i in 0..n {
            let sub = Subgroup::ALL[i % 2];
            let f = draw_factors(i as u64, sub, (i / 2 % 2) as u8, &FactorConfig::default(), &mut rng);
            let x = m.mix(&f.factors(), &mut rng);
            let back = recover_factors(&x, &m).unwrap();
            for j in 0..FACTOR_DIM {
                sq[j] += (back[j] - f.factors()[j]).powi(2);
            }
        }
        for s in sq {
            let rms = (s / n as f64).sqrt();
            assert!(rms < 0.06, "rms {rms}");
        }
    }

    #[test]
    fn nonlinear_mode_refuses_recovery() {
        let cfg = MixingConfig {
            nonlinear: true,
            ..MixingConfig::default()
        };
        let m = MixingModel::new(&cfg, &mut Rng::new(1, 0)).unwrap();
        assert!(matches!(
            recover_factors(&[0.0; FEATURE_DIM], &m),
            Err(Error::UnsupportedMode(_))
        ));
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let m = mixing(0.05);
        let cells = CellTable {
            c_healthy: 2,
            c_amd: 1,
            aa_healthy: 1,
            aa_amd: 1,
        };
        let ds = gen_partition(&cells, &m, &FactorConfig::default(), 7, &mut Rng::new(1, 1));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset(&p, &ds.records).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), ds.records);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("id,subgroup,severity,label,source,x0,"));
        let fp = dir.path().join("f.csv");
        write_factors(&fp, &ds.factors).unwrap();
        let back = read_factors(&fp).unwrap();
        assert_eq!(back[0].1, ds.factors[0].factors());
    }

    #[test]
    fn mixing_weights_roundtrip() {
        let m = mixing(0.05);
        let back = MixingModel::from_weights(&WeightsFile::from_json(&m.to_weights().to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
