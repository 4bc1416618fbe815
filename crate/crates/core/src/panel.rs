//! Return panels: file ingestion, synthetic generation, rolling windows.
//!
//! A [`ReturnsPanel`] is a dates-by-assets matrix of simple returns. Panels
//! are immutable after construction and windows are read-only views, so both
//! can be shared freely across parallel workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Supported panel file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelFormat {
    /// Header `date,<asset1>,<asset2>,...`; ISO-8601 dates; empty cell = missing.
    Csv,
}

/// A T-by-N matrix of per-period simple returns with date and asset labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    values: DMatrix<f64>,
    sector: BTreeMap<String, String>,
}

impl ReturnsPanel {
    /// Build a panel, validating the invariants: strictly increasing dates,
    /// unique asset names, matching dimensions, all entries finite.
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if values.nrows() != dates.len() {
            return Err(Error::domain(format!(
                "panel has {} rows but {} dates",
                values.nrows(),
                dates.len()
            )));
        }
        if values.ncols() != assets.len() {
            return Err(Error::domain(format!(
                "panel has {} columns but {} asset names",
                values.ncols(),
                assets.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("dates are not strictly increasing"));
        }
        let unique: BTreeSet<&String> = assets.iter().collect();
        if unique.len() != assets.len() {
            return Err(Error::domain("duplicate asset identifiers"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("panel contains non-finite entries"));
        }
        Ok(ReturnsPanel {
            dates,
            assets,
            values,
            sector: BTreeMap::new(),
        })
    }

    pub fn n_periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.values.ncols()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Returns of one asset as an owned vector.
    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == name)
    }

    /// Optional map from asset name to sector label.
    pub fn sector(&self) -> &BTreeMap<String, String> {
        &self.sector
    }

    pub fn set_sector(&mut self, sector: BTreeMap<String, String>) {
        self.sector = sector;
    }

    /// Sector label per asset column, `None` where the map has no entry.
    pub fn sector_labels(&self) -> Vec<Option<String>> {
        self.assets
            .iter()
            .map(|a| self.sector.get(a).cloned())
            .collect()
    }

    /// Sub-panel with the given rows and all assets whose entries are finite
    /// on those rows; drops assets per window, mirroring the calibration
    /// protocol of removing assets with any missing value.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<ReturnsPanel> {
        if start + len > self.n_periods() {
            return Err(Error::domain("window exceeds panel length"));
        }
        let keep: Vec<usize> = (0..self.n_assets())
            .filter(|&j| (start..start + len).all(|t| self.values[(t, j)].is_finite()))
            .collect();
        let mut values = DMatrix::zeros(len, keep.len());
        for (cj, &j) in keep.iter().enumerate() {
            for t in 0..len {
                values[(t, cj)] = self.values[(start + t, j)];
            }
        }
        let mut panel = ReturnsPanel::new(
            self.dates[start..start + len].to_vec(),
            keep.iter().map(|&j| self.assets[j].clone()).collect(),
            values,
        )?;
        panel.sector = self.sector.clone();
        Ok(panel)
    }
}

/// Parameters of the synthetic equicorrelated Gaussian design used for
/// calibration experiments with a known ground-truth support.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_periods: usize,
    /// Number of truly relevant factors.
    pub n_relevant: usize,
    /// Absolute loading of each relevant factor (signs are random).
    pub beta_magnitude: f64,
    /// Equicorrelation of the factor columns, in [0, 1).
    pub correlation: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_relevant > self.n_assets {
            return Err(Error::domain("n_relevant exceeds n_assets"));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::domain("correlation must lie in [0, 1)"));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::domain("noise_sd must be positive"));
        }
        if self.n_assets == 0 || self.n_periods == 0 {
            return Err(Error::domain("n_assets and n_periods must be positive"));
        }
        Ok(())
    }
}

/// Rolling calibration window layout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct WindowPlan {
    /// Periods per window (252 for one trading year, 300 for the backtests).
    pub length: usize,
    /// Periods between window starts.
    pub step: usize,
    /// When false, an extra window aligned to the end of the panel is added
    /// if the stepped windows do not already reach it.
    #[serde(default = "default_true")]
    pub drop_incomplete: bool,
}

fn default_true() -> bool {
    true
}

impl WindowPlan {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::domain("window length must be at least 2"));
        }
        if self.step < 1 {
            return Err(Error::domain("window step must be at least 1"));
        }
        Ok(())
    }
}

/// Read-only view of a window `[start, start + length)` of a panel.
#[derive(Debug, Clone, Copy)]
pub struct PanelWindow<'a> {
    panel: &'a ReturnsPanel,
    pub start: usize,
    pub length: usize,
}

impl<'a> PanelWindow<'a> {
    pub fn window_end(&self) -> NaiveDate {
        self.panel.dates()[self.start + self.length - 1]
    }

    /// Materialize the window as an owned panel with per-window asset
    /// filtering applied.
    pub fn materialize(&self) -> Result<ReturnsPanel> {
        self.panel.slice_rows(self.start, self.length)
    }
}

/// Enumerate rolling windows. Starts are spaced by `plan.step`; the number of
/// stepped windows is `floor((T - length) / step) + 1`.
pub fn windows<'a>(panel: &'a ReturnsPanel, plan: &WindowPlan) -> Result<Vec<PanelWindow<'a>>> {
    plan.validate()?;
    let t = panel.n_periods();
    if plan.length > t {
        return Err(Error::domain(format!(
            "window length {} exceeds panel length {}",
            plan.length, t
        )));
    }
    let n_windows = (t - plan.length) / plan.step + 1;
    let mut out: Vec<PanelWindow<'a>> = (0..n_windows)
        .map(|k| PanelWindow {
            panel,
            start: k * plan.step,
            length: plan.length,
        })
        .collect();
    if !plan.drop_incomplete {
        let last_start = (n_windows - 1) * plan.step;
        if last_start + plan.length < t {
            out.push(PanelWindow {
                panel,
                start: t - plan.length,
                length: plan.length,
            });
        }
    }
    Ok(out)
}

/// Load a panel from a file, dropping assets that have any missing value.
pub fn load_panel(path: &Path, format: PanelFormat) -> Result<ReturnsPanel> {
    match format {
        PanelFormat::Csv => load_panel_csv(path),
    }
}

fn load_panel_csv(path: &Path) -> Result<ReturnsPanel> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(1, "empty file"))?;
    let mut fields = header.split(',');
    match fields.next() {
        Some("date") => {}
        _ => return Err(Error::format(1, "header must start with 'date'")),
    }
    let assets: Vec<String> = fields.map(|s| s.trim().to_string()).collect();
    if assets.is_empty() {
        return Err(Error::format(1, "header names no assets"));
    }

    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let date_cell = cells.next().unwrap_or("");
        let date = NaiveDate::parse_from_str(date_cell.trim(), "%Y-%m-%d").map_err(|_| {
            Error::format(line_no, format!("unparseable date '{}'", date_cell.trim()))
        })?;
        let mut row = Vec::with_capacity(assets.len());
        for cell in cells {
            let cell = cell.trim();
            if cell.is_empty() {
                row.push(f64::NAN); // missing
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::format(line_no, format!("unparseable return '{cell}'"))
                })?;
                row.push(v);
            }
        }
        if row.len() != assets.len() {
            return Err(Error::format(
                line_no,
                format!("expected {} cells, found {}", assets.len(), row.len()),
            ));
        }
        dates.push(date);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::domain("panel has no data rows"));
    }

    // Drop assets with any missing value over the loaded range.
    let keep: Vec<usize> = (0..assets.len())
        .filter(|&j| rows.iter().all(|r| r[j].is_finite()))
        .collect();
    if keep.is_empty() {
        return Err(Error::domain(
            "no asset has a complete return history in this file",
        ));
    }
    let values = DMatrix::from_fn(rows.len(), keep.len(), |t, cj| rows[t][keep[cj]]);
    ReturnsPanel::new(
        dates,
        keep.iter().map(|&j| assets[j].clone()).collect(),
        values,
    )
}

/// Write a panel in the CSV panel format. Returns are written with Rust's
/// shortest round-trip float formatting, so `load_panel(save_panel(p))`
/// reproduces the values exactly.
pub fn save_panel(panel: &ReturnsPanel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("date");
    for a in panel.assets() {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for (t, date) in panel.dates().iter().enumerate() {
        let _ = write!(out, "{}", date.format("%Y-%m-%d"));
        for j in 0..panel.n_assets() {
            let _ = write!(out, ",{}", panel.values()[(t, j)]);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Load a sector map CSV with header `asset,sector`.
pub fn load_sectors(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::format(1, "empty sector file"))?;
    if header.trim() != "asset,sector" {
        return Err(Error::format(1, "sector header must be 'asset,sector'"));
    }
    let mut map = BTreeMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let (asset, sector) = match (cells.next(), cells.next()) {
            (Some(a), Some(s)) => (a.trim().to_string(), s.trim().to_string()),
            _ => return Err(Error::format(idx + 1, "expected 'asset,sector'")),
        };
        map.insert(asset, sector);
    }
    Ok(map)
}

/// Generate an equicorrelated Gaussian panel with a planted sparse response.
///
/// The factor matrix X has zero mean, unit variance and pairwise correlation
/// `spec.correlation`; the response is `y = X beta + z` where `beta` has
/// `n_relevant` entries of magnitude `beta_magnitude` with random signs and
/// `z` is i.i.d. Gaussian noise. The response is prepended as column `Y`;
/// the returned support indexes the factor columns (0-based, excluding `Y`).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(ReturnsPanel, BTreeSet<usize>)> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed);
    let n = spec.n_assets;
    let t = spec.n_periods;
    let rho = spec.correlation;

    // Equicorrelated draw: sqrt(1-rho) * idiosyncratic + sqrt(rho) * common.
    let idio = (1.0 - rho).sqrt();
    let comm = rho.sqrt();
    let mut x = DMatrix::zeros(t, n);
    for i in 0..t {
        let shared: f64 = rng.sample(StandardNormal);
        for j in 0..n {
            let g: f64 = rng.sample(StandardNormal);
            x[(i, j)] = idio * g + comm * shared;
        }
    }

    // Random support with random signs.
    let mut candidates: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let j = rng.random_range(i..n);
        candidates.swap(i, j);
    }
    let support: BTreeSet<usize> = candidates[..spec.n_relevant].iter().copied().collect();
    let mut beta = DVector::zeros(n);
    for &j in &support {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        beta[j] = sign * spec.beta_magnitude;
    }

    let mut y = &x * &beta;
    for v in y.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += spec.noise_sd * z;
    }

    let mut values = DMatrix::zeros(t, n + 1);
    values.column_mut(0).copy_from(&y);
    values.view_mut((0, 1), (t, n)).copy_from(&x);

    let width = (n.max(1) as f64).log10().floor() as usize + 1;
    let mut assets = Vec::with_capacity(n + 1);
    assets.push("Y".to_string());
    for j in 0..n {
        assets.push(format!("A{j:0width$}"));
    }

    let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
    let dates: Vec<NaiveDate> = (0..t as i64)
        .map(|d| start + chrono::Duration::days(d))
        .collect();

    Ok((ReturnsPanel::new(dates, assets, values)?, support))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn load_complete_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "date,AAA,BBB\n2020-01-01,0.01,-0.02\n2020-01-02,0.00,0.03\n2020-01-03,-0.01,0.01\n",
        )
        .unwrap();
        let panel = load_panel(&path, PanelFormat::Csv).unwrap();
        assert_eq!(panel.n_periods(), 3);
        assert_eq!(panel.n_assets(), 2);
        assert_eq!(panel.assets(), &["AAA".to_string(), "BBB".to_string()]);
        assert_abs_diff_eq!(panel.values()[(1, 1)], 0.03);
    }

    #[test]
    fn missing_cell_drops_asset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "date,AAA,BBB\n2020-01-01,0.01,-0.02\n2020-01-02,0.00,\n2020-01-03,-0.01,0.01\n",
        )
        .unwrap();
        let panel = load_panel(&path, PanelFormat::Csv).unwrap();
        assert_eq!(panel.assets(), &["AAA".to_string()]);
        assert_eq!(panel.n_periods(), 3);
    }

    #[test]
    fn bad_date_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(
            &path,
            "date,AAA\n2020-01-01,0.01\nnot-a-date,0.02\n",
        )
        .unwrap();
        let err = load_panel(&path, PanelFormat::Csv).unwrap_err();
        match err {
            Error::Format { line, .. } => assert_eq!(line, 3),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn all_assets_missing_is_domain_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "date,AAA\n2020-01-01,\n").unwrap();
        assert!(matches!(
            load_panel(&path, PanelFormat::Csv),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn synthetic_null_model_has_empty_support() {
        let spec = SyntheticSpec {
            n_assets: 5,
            n_periods: 20,
            n_relevant: 0,
            beta_magnitude: 1.0,
            correlation: 0.0,
            noise_sd: 1.0,
            seed: 7,
        };
        let (panel, support) = generate_synthetic(&spec).unwrap();
        assert!(support.is_empty());
        assert_eq!(panel.n_assets(), 6); // Y + 5 factors
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            n_assets: 8,
            n_periods: 30,
            n_relevant: 3,
            beta_magnitude: 0.5,
            correlation: 0.2,
            noise_sd: 1.0,
            seed: 99,
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn synthetic_ols_recovers_beta_when_noise_vanishes() {
        let spec = SyntheticSpec {
            n_assets: 6,
            n_periods: 200,
            n_relevant: 6,
            beta_magnitude: 1.0,
            correlation: 0.0,
            noise_sd: 1e-10,
            seed: 3,
        };
        let (panel, support) = generate_synthetic(&spec).unwrap();
        assert_eq!(support.len(), 6);
        let y = panel.column(0);
        let x = panel.values().view((0, 1), (200, 6)).into_owned();
        // closed-form OLS oracle
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * &y;
        let beta_hat = xtx.lu().solve(&xty).unwrap();
        for j in 0..6 {
            assert_abs_diff_eq!(beta_hat[j].abs(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn synthetic_correlation_converges() {
        let spec = SyntheticSpec {
            n_assets: 4,
            n_periods: 10_000,
            n_relevant: 0,
            beta_magnitude: 0.0,
            correlation: 0.4,
            noise_sd: 1.0,
            seed: 11,
        };
        let (panel, _) = generate_synthetic(&spec).unwrap();
        for a in 1..4 {
            for b in (a + 1)..5 {
                let ca: Vec<f64> = panel.column(a).iter().copied().collect();
                let cb: Vec<f64> = panel.column(b).iter().copied().collect();
                let r = crate::stats::pearson(&ca, &cb).unwrap();
                assert!((r - 0.4).abs() < 0.05, "rho_hat {r} too far from 0.4");
            }
        }
    }

    #[test]
    fn window_examples() {
        let spec = SyntheticSpec {
            n_assets: 2,
            n_periods: 12,
            n_relevant: 0,
            beta_magnitude: 0.0,
            correlation: 0.0,
            noise_sd: 1.0,
            seed: 1,
        };
        let (panel, _) = generate_synthetic(&spec).unwrap();
        let plan = WindowPlan {
            length: 10,
            step: 1,
            drop_incomplete: true,
        };
        let ws = windows(&panel, &plan).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(
            ws.iter().map(|w| w.start).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );

        let full = WindowPlan {
            length: 12,
            step: 1,
            drop_incomplete: true,
        };
        assert_eq!(windows(&panel, &full).unwrap().len(), 1);

        let too_long = WindowPlan {
            length: 13,
            step: 1,
            drop_incomplete: true,
        };
        assert!(windows(&panel, &too_long).is_err());
    }

    #[test]
    fn tail_window_added_when_requested() {
        let spec = SyntheticSpec {
            n_assets: 2,
            n_periods: 11,
            n_relevant: 0,
            beta_magnitude: 0.0,
            correlation: 0.0,
            noise_sd: 1.0,
            seed: 1,
        };
        let (panel, _) = generate_synthetic(&spec).unwrap();
        let plan = WindowPlan {
            length: 4,
            step: 3,
            drop_incomplete: false,
        };
        // stepped starts: 0, 3, 6 (6+4=10 < 11) -> tail window at start 7
        let ws = windows(&panel, &plan).unwrap();
        assert_eq!(
            ws.iter().map(|w| w.start).collect::<Vec<_>>(),
            vec![0, 3, 6, 7]
        );
    }

    #[test]
    fn rejects_unsorted_dates_and_duplicate_assets() {
        let values = DMatrix::from_element(2, 2, 0.0);
        let err = ReturnsPanel::new(
            vec![date(2020, 1, 2), date(2020, 1, 1)],
            vec!["A".into(), "B".into()],
            values.clone(),
        );
        assert!(err.is_err());
        let err = ReturnsPanel::new(
            vec![date(2020, 1, 1), date(2020, 1, 2)],
            vec!["A".into(), "A".into()],
            values,
        );
        assert!(err.is_err());
    }

    proptest! {
        #[test]
        fn window_count_formula(t in 2usize..60, length in 2usize..60, step in 1usize..8) {
            prop_assume!(length <= t);
            let spec = SyntheticSpec {
                n_assets: 1,
                n_periods: t,
                n_relevant: 0,
                beta_magnitude: 0.0,
                correlation: 0.0,
                noise_sd: 1.0,
                seed: 5,
            };
            let (panel, _) = generate_synthetic(&spec).unwrap();
            let plan = WindowPlan { length, step, drop_incomplete: true };
            let ws = windows(&panel, &plan).unwrap();
            prop_assert_eq!(ws.len(), (t - length) / step + 1);
            for w in &ws {
                prop_assert!(w.start + w.length <= t);
            }
        }

        #[test]
        fn csv_round_trip(seed in 0u64..1000) {
            let spec = SyntheticSpec {
                n_assets: 3,
                n_periods: 5,
                n_relevant: 1,
                beta_magnitude: 0.7,
                correlation: 0.1,
                noise_sd: 0.5,
                seed,
            };
            let (panel, _) = generate_synthetic(&spec).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("roundtrip.csv");
            save_panel(&panel, &path).unwrap();
            let back = load_panel(&path, PanelFormat::Csv).unwrap();
            prop_assert_eq!(panel, back);
        }
    }
}
