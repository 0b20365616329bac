//! Market data: CSV ingestion, price relatives, chronological splits, and a
//! correlated geometric-Brownian-motion generator with a plantable lead-lag
//! signal for controlled experiments.
//!
//! CSV format: first column `date` (ISO-8601), remaining columns `<asset>` or
//! `<asset>:<channel>`; UTF-8, decimal point, one row per date. Missing or
//! non-positive prices are rejected, never imputed.

use crate::blocks::AssetPermutation;
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor3;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

/// Validated table of positive prices on strictly increasing dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub dates: Vec<String>,
    pub assets: Vec<String>,
    pub channel_names: Vec<String>,
    /// Indexed (date, asset, channel), row-major.
    values: Vec<f64>,
}

impl PriceTable {
    pub fn new(
        dates: Vec<String>,
        assets: Vec<String>,
        channel_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let expect = dates.len() * assets.len() * channel_names.len();
        if values.len() != expect {
            return Err(CoreError::Data(format!(
                "expected {expect} values, got {}",
                values.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(CoreError::Data(format!(
                    "dates not strictly increasing: {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(CoreError::Data(format!("non-positive price {v}")));
        }
        Ok(PriceTable {
            dates,
            assets,
            channel_names,
            values,
        })
    }

    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn asset_count(&self) -> usize {
        self.assets.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channel_names.len()
    }

    #[inline]
    pub fn price(&self, day: usize, asset: usize, channel: usize) -> f64 {
        self.values[(day * self.assets.len() + asset) * self.channel_names.len() + channel]
    }

    /// Reorder asset columns: new asset i is old asset sigma(i).
    pub fn permute_assets(&self, sigma: &AssetPermutation) -> Result<PriceTable> {
        if sigma.len() != self.asset_count() {
            return Err(CoreError::Data(format!(
                "permutation of {} cannot reorder {} assets",
                sigma.len(),
                self.asset_count()
            )));
        }
        let (n, m, c) = (self.days(), self.asset_count(), self.channel_count());
        let mut values = vec![0.0; self.values.len()];
        let mut assets = Vec::with_capacity(m);
        for i in 0..m {
            assets.push(self.assets[sigma.apply(i)].clone());
        }
        for day in 0..n {
            for i in 0..m {
                let src = sigma.apply(i);
                for k in 0..c {
                    values[(day * m + i) * c + k] = self.values[(day * m + src) * c + k];
                }
            }
        }
        PriceTable::new(
            self.dates.clone(),
            assets,
            self.channel_names.clone(),
            values,
        )
    }
}

/// Named chronological ranges over the relatives timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitId {
    Train,
    Validation,
    Test,
}

/// Contiguous, ordered train/validation/test boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train_end: usize,
    pub val_end: usize,
    pub len: usize,
}

impl Splits {
    pub fn from_fractions(len: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&train_frac)
            || !(0.0..1.0).contains(&val_frac)
            || train_frac + val_frac >= 1.0
        {
            return Err(CoreError::InvalidArgument(format!(
                "invalid split fractions {train_frac}/{val_frac}"
            )));
        }
        let train_end = (len as f64 * train_frac).floor() as usize;
        let val_end = (len as f64 * (train_frac + val_frac)).floor() as usize;
        Ok(Splits {
            train_end,
            val_end,
            len,
        })
    }

    pub fn range(&self, id: SplitId) -> Range<usize> {
        match id {
            SplitId::Train => 0..self.train_end,
            SplitId::Validation => self.train_end..self.val_end,
            SplitId::Test => self.val_end..self.len,
        }
    }
}

/// Gross price relatives and their log transforms, plus split boundaries.
/// The environment consumes the raw relatives; the network sees log relatives
/// (scale-stationary without any recent-history normalization, which would
/// break the multi-period forward pass).
#[derive(Debug, Clone)]
pub struct MarketWindow {
    pub assets: Vec<String>,
    /// Dates of the relatives (one fewer than price rows).
    pub dates: Vec<String>,
    /// m x N x d gross relatives p_t / p_{t-1}.
    relatives: Tensor3,
    /// m x N x d natural logs of the relatives.
    features: Tensor3,
    pub splits: Option<Splits>,
}

impl MarketWindow {
    pub fn asset_count(&self) -> usize {
        self.relatives.assets()
    }

    pub fn len(&self) -> usize {
        self.relatives.time_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.relatives.channels()
    }

    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        if splits.len != self.len() {
            return Err(CoreError::InvalidArgument(format!(
                "splits cover {} of {} time steps",
                splits.len,
                self.len()
            )));
        }
        self.splits = Some(splits);
        Ok(self)
    }

    fn split_range(&self, id: SplitId) -> Result<Range<usize>> {
        let splits = self
            .splits
            .as_ref()
            .ok_or_else(|| CoreError::InvalidArgument("no splits defined".into()))?;
        Ok(splits.range(id))
    }

    /// Feature window [start, start+len), asserted to lie inside one split.
    pub fn features_window(&self, id: SplitId, start: usize, len: usize) -> Result<Tensor3> {
        let range = self.split_range(id)?;
        if start < range.start || start + len > range.end {
            return Err(CoreError::InvalidArgument(format!(
                "window {start}..{} leaves the {id:?} split {range:?}",
                start + len
            )));
        }
        self.features.time_slice(start, len)
    }

    /// Raw-relatives window with the same in-split assertion.
    pub fn relatives_window(&self, id: SplitId, start: usize, len: usize) -> Result<Tensor3> {
        let range = self.split_range(id)?;
        if start < range.start || start + len > range.end {
            return Err(CoreError::InvalidArgument(format!(
                "window {start}..{} leaves the {id:?} split {range:?}",
                start + len
            )));
        }
        self.relatives.time_slice(start, len)
    }

    /// Gross relatives of all assets at one time index (first channel).
    pub fn relatives_at(&self, t: usize) -> Vec<f64> {
        (0..self.asset_count())
            .map(|i| self.relatives.get(i, t, 0))
            .collect()
    }

    pub fn features(&self) -> &Tensor3 {
        &self.features
    }

    pub fn relatives(&self) -> &Tensor3 {
        &self.relatives
    }

    /// Reorder assets; splits carry over.
    pub fn permute_assets(&self, sigma: &AssetPermutation) -> Result<MarketWindow> {
        let relatives = crate::blocks::permute_assets(sigma, &self.relatives)?;
        let features = crate::blocks::permute_assets(sigma, &self.features)?;
        let assets = (0..self.asset_count())
            .map(|i| self.assets[sigma.apply(i)].clone())
            .collect();
        Ok(MarketWindow {
            assets,
            dates: self.dates.clone(),
            relatives,
            features,
            splits: self.splits.clone(),
        })
    }
}

/// Gross relatives xi_t = p_t / p_{t-1} per channel; requires two dates.
pub fn to_relatives(table: &PriceTable) -> Result<MarketWindow> {
    let n = table.days();
    if n < 2 {
        return Err(CoreError::Data(
            "need at least two dates for relatives".into(),
        ));
    }
    let (m, d) = (table.asset_count(), table.channel_count());
    let mut relatives = Tensor3::zeros(m, n - 1, d);
    let mut features = Tensor3::zeros(m, n - 1, d);
    for t in 1..n {
        for i in 0..m {
            for k in 0..d {
                let xi = table.price(t, i, k) / table.price(t - 1, i, k);
                relatives.set(i, t - 1, k, xi);
                features.set(i, t - 1, k, xi.ln());
            }
        }
    }
    Ok(MarketWindow {
        assets: table.assets.clone(),
        dates: table.dates[1..].to_vec(),
        relatives,
        features,
        splits: None,
    })
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Parse a price CSV. Channels are inferred from the header: plain asset
/// names give one `close` channel; `asset:channel` columns group by asset.
pub fn load_csv(path: &Path) -> Result<PriceTable> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<PriceTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CoreError::Data("empty csv".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "date" {
        return Err(CoreError::Csv {
            line: 1,
            column: "1".into(),
            message: "header must start with 'date' and name at least one asset".into(),
        });
    }

    // column layout: asset & channel per data column
    let mut assets: Vec<String> = Vec::new();
    let mut channel_names: Vec<String> = Vec::new();
    let mut layout: Vec<(usize, usize)> = Vec::new(); // column -> (asset, channel)
    for col in &cols[1..] {
        let (asset, channel) = match col.split_once(':') {
            Some((a, c)) => (a.to_string(), c.to_string()),
            None => (col.to_string(), "close".to_string()),
        };
        let ai = match assets.iter().position(|a| *a == asset) {
            Some(i) => i,
            None => {
                assets.push(asset);
                assets.len() - 1
            }
        };
        let ci = match channel_names.iter().position(|c| *c == channel) {
            Some(i) => i,
            None => {
                channel_names.push(channel);
                channel_names.len() - 1
            }
        };
        layout.push((ai, ci));
    }
    let (m, c) = (assets.len(), channel_names.len());
    if layout.len() != m * c {
        return Err(CoreError::Csv {
            line: 1,
            column: "header".into(),
            message: format!(
                "expected {m} assets x {c} channels columns, found {}",
                layout.len()
            ),
        });
    }

    let mut dates: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(CoreError::Csv {
                line: lineno + 1,
                column: format!("{}", fields.len()),
                message: format!("expected {} fields", cols.len()),
            });
        }
        let date = fields[0].to_string();
        if let Some(last) = dates.last() {
            if date <= *last {
                return Err(CoreError::Csv {
                    line: lineno + 1,
                    column: "date".into(),
                    message: format!("date {date} not after {last}"),
                });
            }
        }
        let row_base = values.len();
        values.resize(row_base + m * c, f64::NAN);
        for (field, &(ai, ci)) in fields[1..].iter().zip(&layout) {
            let v: f64 = field.parse().map_err(|_| CoreError::Csv {
                line: lineno + 1,
                column: cols[1 + layout.iter().position(|l| *l == (ai, ci)).unwrap()].to_string(),
                message: format!("cannot parse '{field}' as a number"),
            })?;
            if !v.is_finite() || v <= 0.0 {
                return Err(CoreError::Csv {
                    line: lineno + 1,
                    column: format!("{}:{}", assets[ai], channel_names[ci]),
                    message: format!("non-positive price {v}"),
                });
            }
            values[row_base + ai * c + ci] = v;
        }
        dates.push(date);
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(CoreError::Data("missing cells in csv".into()));
    }
    PriceTable::new(dates, assets, channel_names, values)
}

/// Write a table in the same format `load_csv` reads. Numbers use the
/// shortest round-trip representation, so reload reproduces them exactly.
pub fn write_csv(table: &PriceTable, path: &Path) -> Result<()> {
    std::fs::write(path, render_csv(table))?;
    Ok(())
}

pub fn render_csv(table: &PriceTable) -> String {
    let single = table.channel_count() == 1 && table.channel_names[0] == "close";
    let mut out = String::from("date");
    for a in &table.assets {
        if single {
            let _ = write!(out, ",{a}");
        } else {
            for ch in &table.channel_names {
                let _ = write!(out, ",{a}:{ch}");
            }
        }
    }
    out.push('\n');
    for (t, date) in table.dates.iter().enumerate() {
        let _ = write!(out, "{date}");
        for i in 0..table.asset_count() {
            for k in 0..table.channel_count() {
                let _ = write!(out, ",{}", table.price(t, i, k));
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Lead-lag structure planted into the generator: the follower's next-day
/// log return includes `coefficient` times the leader's demeaned log return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLeadLag {
    pub leader: usize,
    pub follower: usize,
    pub coefficient: f64,
}

/// Correlated GBM configuration. Daily log returns are mu + sigma * z with z
/// drawn from N(0, corr); sigma = 0 gives the deterministic path exp(mu * t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub assets: usize,
    pub days: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Symmetric PSD with unit diagonal, assets x assets (row-major).
    pub corr: Vec<Vec<f64>>,
    pub seed: u64,
    pub start_price: f64,
    pub start_date: String,
    #[serde(default)]
    pub planted: Vec<PlantedLeadLag>,
}

impl SynthConfig {
    pub fn iid(assets: usize, days: usize, mu: f64, sigma: f64, seed: u64) -> Self {
        let corr = (0..assets)
            .map(|i| {
                (0..assets)
                    .map(|j| if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        SynthConfig {
            assets,
            days,
            mu: vec![mu; assets],
            sigma: vec![sigma; assets],
            corr,
            seed,
            start_price: 100.0,
            start_date: "2015-01-02".into(),
            planted: Vec::new(),
        }
    }
}

/// Lower-triangular Cholesky factor; fails on non-PSD input.
fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if a[i].len() != n {
            return Err(CoreError::InvalidArgument(
                "correlation matrix is not square".into(),
            ));
        }
        for j in 0..=i {
            if (a[i][j] - a[j][i]).abs() > 1e-12 {
                return Err(CoreError::InvalidArgument(
                    "correlation matrix is not symmetric".into(),
                ));
            }
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(CoreError::InvalidArgument(
                        "correlation matrix is not positive definite".into(),
                    ));
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Days-from-epoch to ISO date (proleptic Gregorian).
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = (if mp < 10 { mp + 3 } else { mp - 9 }) as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = (y - era * 400) as u64;
    let mp = if m > 2 { m - 3 } else { m + 9 } as u64;
    let doy = (153 * mp + 2) / 5 + d as u64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe as i64 - 719_468
}

fn parse_iso(date: &str) -> Result<i64> {
    let parts: Vec<&str> = date.split('-').collect();
    if parts.len() != 3 {
        return Err(CoreError::Data(format!("bad ISO date '{date}'")));
    }
    let y: i64 = parts[0]
        .parse()
        .map_err(|_| CoreError::Data(format!("bad year in '{date}'")))?;
    let m: u32 = parts[1]
        .parse()
        .map_err(|_| CoreError::Data(format!("bad month in '{date}'")))?;
    let d: u32 = parts[2]
        .parse()
        .map_err(|_| CoreError::Data(format!("bad day in '{date}'")))?;
    Ok(days_from_civil(y, m, d))
}

/// Sequence of weekday dates starting at `start`.
fn trading_dates(start: &str, count: usize) -> Result<Vec<String>> {
    let mut day = parse_iso(start)?;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        // days_from_civil(1970,1,1) = 0 was a Thursday
        let weekday = (day.rem_euclid(7) + 4) % 7; // 0 = Sunday
        if weekday != 0 && weekday != 6 {
            let (y, m, d) = civil_from_days(day);
            out.push(format!("{y:04}-{m:02}-{d:02}"));
        }
        day += 1;
    }
    Ok(out)
}

/// Generate correlated GBM close prices, optionally with a planted lead-lag
/// dependency that gives cross-asset layers a learnable signal.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<PriceTable> {
    let m = cfg.assets;
    if cfg.mu.len() != m || cfg.sigma.len() != m || cfg.corr.len() != m {
        return Err(CoreError::InvalidArgument(
            "mu/sigma/corr must match the asset count".into(),
        ));
    }
    if cfg.days < 2 {
        return Err(CoreError::InvalidArgument("need at least two days".into()));
    }
    for p in &cfg.planted {
        if p.leader >= m || p.follower >= m || p.leader == p.follower {
            return Err(CoreError::InvalidArgument(format!(
                "planted pair {}->{} invalid for {m} assets",
                p.leader, p.follower
            )));
        }
    }
    let chol = cholesky(&cfg.corr)?;
    let mut rng = Rng::new(cfg.seed);
    let mut log_prices = vec![cfg.start_price.ln(); m];
    let mut values = Vec::with_capacity(cfg.days * m);
    values.extend(log_prices.iter().map(|lp| lp.exp()));
    let mut prev_shock = vec![0.0; m]; // yesterday's demeaned log returns

    for _ in 1..cfg.days {
        let z: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let mut shocks = vec![0.0; m];
        let mut rets = vec![0.0; m];
        for i in 0..m {
            let mut corr_z = 0.0;
            for k in 0..=i {
                corr_z += chol[i][k] * z[k];
            }
            shocks[i] = cfg.sigma[i] * corr_z;
            rets[i] = cfg.mu[i] + shocks[i];
        }
        for p in &cfg.planted {
            rets[p.follower] += p.coefficient * prev_shock[p.leader];
        }
        for i in 0..m {
            log_prices[i] += rets[i];
            values.push(log_prices[i].exp());
        }
        prev_shock = shocks;
    }

    PriceTable::new(
        trading_dates(&cfg.start_date, cfg.days)?,
        (0..m).map(|i| format!("A{i:02}")).collect(),
        vec!["close".into()],
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_rng;

    #[test]
    fn csv_roundtrip_is_exact() {
        let cfg = SynthConfig::iid(3, 5, 0.0002, 0.01, 9);
        let table = generate_synthetic(&cfg).unwrap();
        let text = render_csv(&table);
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn csv_parses_well_formed_file() {
        let text = "date,AAA,BBB,CCC\n2020-01-01,1.0,2.0,3.0\n2020-01-02,1.1,2.1,3.1\n\
                    2020-01-03,1.2,2.2,3.2\n2020-01-06,1.3,2.3,3.3\n2020-01-07,1.4,2.4,3.4\n";
        let table = parse_csv(text).unwrap();
        assert_eq!(table.days(), 5);
        assert_eq!(table.asset_count(), 3);
        assert_eq!(table.channel_count(), 1);
        assert_eq!(table.price(1, 2, 0), 3.1);
    }

    #[test]
    fn csv_rejects_zero_price_naming_the_cell() {
        let text = "date,AAA,BBB\n2020-01-01,1.0,2.0\n2020-01-02,0.0,2.1\n";
        let err = parse_csv(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("AAA"), "{msg}");
    }

    #[test]
    fn csv_rejects_duplicate_dates() {
        let text = "date,AAA\n2020-01-01,1.0\n2020-01-01,1.1\n";
        assert!(parse_csv(text).is_err());
    }

    #[test]
    fn csv_multichannel_headers() {
        let text = "date,X:close,X:open,Y:close,Y:open\n2020-01-01,1,2,3,4\n2020-01-02,5,6,7,8\n";
        let table = parse_csv(text).unwrap();
        assert_eq!(table.asset_count(), 2);
        assert_eq!(table.channel_count(), 2);
        assert_eq!(table.price(1, 1, 0), 7.0);
        let text2 = render_csv(&table);
        assert_eq!(parse_csv(&text2).unwrap(), table);
    }

    #[test]
    fn relatives_constant_and_doubling() {
        let table = PriceTable::new(
            vec![
                "2020-01-01".into(),
                "2020-01-02".into(),
                "2020-01-03".into(),
            ],
            vec!["A".into()],
            vec!["close".into()],
            vec![2.0, 2.0, 4.0],
        )
        .unwrap();
        let win = to_relatives(&table).unwrap();
        assert_eq!(win.relatives().get(0, 0, 0), 1.0);
        assert_eq!(win.relatives().get(0, 1, 0), 2.0);
        assert_eq!(win.features().get(0, 0, 0), 0.0);
    }

    #[test]
    fn relatives_match_scalar_loop() {
        let cfg = SynthConfig::iid(2, 20, 0.0, 0.02, 10);
        let table = generate_synthetic(&cfg).unwrap();
        let win = to_relatives(&table).unwrap();
        for t in 1..20 {
            for i in 0..2 {
                let expect = table.price(t, i, 0) / table.price(t - 1, i, 0);
                assert!((win.relatives().get(i, t - 1, 0) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_vol_paths_are_exponential() {
        let cfg = SynthConfig::iid(2, 50, 0.001, 0.0, 11);
        let table = generate_synthetic(&cfg).unwrap();
        for t in 0..50 {
            let expect = (0.001 * t as f64).exp();
            let ratio = table.price(t, 0, 0) / table.price(0, 0, 0);
            assert!(
                (ratio - expect).abs() < 1e-9,
                "day {t}: {ratio} vs {expect}"
            );
        }
    }

    #[test]
    fn identity_correlation_keeps_cross_corr_small() {
        let cfg = SynthConfig::iid(4, 5000, 0.0, 0.01, 12);
        let table = generate_synthetic(&cfg).unwrap();
        let win = to_relatives(&table).unwrap();
        let n = win.len();
        let series: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..n).map(|t| win.features().get(i, t, 0)).collect())
            .collect();
        for a in 0..4 {
            for b in (a + 1)..4 {
                let c = sample_corr(&series[a], &series[b]);
                assert!(c.abs() <= 0.1, "corr({a},{b}) = {c}");
            }
        }
    }

    fn sample_corr(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx.sqrt() * syy.sqrt())
    }

    #[test]
    fn planted_lead_lag_is_detectable() {
        let mut cfg = SynthConfig::iid(3, 5000, 0.0, 0.01, 13);
        cfg.planted = vec![PlantedLeadLag {
            leader: 0,
            follower: 2,
            coefficient: 0.5,
        }];
        let table = generate_synthetic(&cfg).unwrap();
        let win = to_relatives(&table).unwrap();
        let n = win.len();
        let leader: Vec<f64> = (0..n - 1).map(|t| win.features().get(0, t, 0)).collect();
        let follower: Vec<f64> = (1..n).map(|t| win.features().get(2, t, 0)).collect();
        let c = sample_corr(&leader, &follower);
        assert!(c >= 0.3, "lagged cross-correlation {c}");
    }

    #[test]
    fn nonpsd_correlation_is_rejected() {
        let mut cfg = SynthConfig::iid(2, 10, 0.0, 0.01, 14);
        cfg.corr = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn split_hygiene_is_enforced() {
        let cfg = SynthConfig::iid(2, 101, 0.0, 0.01, 15);
        let table = generate_synthetic(&cfg).unwrap();
        let win = to_relatives(&table).unwrap(); // 100 relatives
        let win = win
            .with_splits(Splits::from_fractions(100, 0.6, 0.2).unwrap())
            .unwrap();
        assert!(win.features_window(SplitId::Train, 0, 40).is_ok());
        assert!(win.features_window(SplitId::Train, 30, 40).is_err()); // crosses into validation
        assert!(win.features_window(SplitId::Validation, 60, 20).is_ok());
        assert!(win.features_window(SplitId::Validation, 55, 10).is_err());
        assert!(win.features_window(SplitId::Test, 80, 20).is_ok());
        assert!(win.features_window(SplitId::Test, 85, 20).is_err()); // past the end
    }

    #[test]
    fn csv_permutation_commutes_with_window_permutation() {
        let mut rng = seed_rng(16);
        let cfg = SynthConfig::iid(4, 30, 0.0, 0.02, 17);
        let table = generate_synthetic(&cfg).unwrap();
        let sigma = AssetPermutation::random(4, &mut rng);
        let a = to_relatives(&table.permute_assets(&sigma).unwrap()).unwrap();
        let b = to_relatives(&table)
            .unwrap()
            .permute_assets(&sigma)
            .unwrap();
        assert_eq!(a.assets, b.assets);
        assert_eq!(a.relatives(), b.relatives());
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig::iid(3, 50, 0.0001, 0.015, 18);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trading_dates_skip_weekends() {
        let dates = trading_dates("2020-01-01", 10).unwrap();
        assert_eq!(dates[0], "2020-01-01"); // Wednesday
        assert_eq!(dates[2], "2020-01-03"); // Friday
        assert_eq!(dates[3], "2020-01-06"); // Monday
        for d in &dates {
            let day = parse_iso(d).unwrap();
            let weekday = (day.rem_euclid(7) + 4) % 7;
            assert!(weekday != 0 && weekday != 6, "{d} is a weekend");
        }
    }
}
