//! PDAP data model, file ingestion, denoising and coordinate normalization.
//!
//! A [`Pdap`] is a dense rectangular grid of path power (dB) over a uniform
//! delay axis (ns) and a uniform azimuth axis (deg). Everything downstream
//! (contours, characteristic points, clustering, metrics) consumes either the
//! grid itself or the [`MpcSample`]s surviving the power threshold.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported on-disk PDAP encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdapFormat {
    Json,
    Csv,
}

/// Power-delay-angle profile: the terrain every other module walks on.
///
/// `power[i][j]` is the path power in dB at delay `delay_ns[i]` and azimuth
/// `angle_deg[j]`. Both axes are strictly increasing with constant step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdap {
    pub delay_ns: Vec<f64>,
    pub angle_deg: Vec<f64>,
    pub power_db: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

/// One grid node that survived denoising.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcSample {
    pub tau_ns: f64,
    pub phi_deg: f64,
    pub power_db: f64,
    /// (delay bin, angle bin) of the node this sample sits on.
    pub grid_index: (usize, usize),
}

/// Sample-set statistics backing the sigma-normalized distance and the
/// min-max normalizations used by the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationContext {
    /// Population standard deviation of sample delays (ns).
    pub sigma_tau: f64,
    /// Population standard deviation of sample angles (deg).
    pub sigma_phi: f64,
    pub delay_range: (f64, f64),
    pub angle_range: (f64, f64),
}

impl NormalizationContext {
    /// Sigma-normalized Euclidean distance between two delay-angle points.
    pub fn distance(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let dt = (a.0 - b.0) / self.sigma_tau;
        let dp = (a.1 - b.1) / self.sigma_phi;
        (dt * dt + dp * dp).sqrt()
    }
}

impl Pdap {
    /// Builds and validates a PDAP from its parts.
    pub fn new(
        delay_ns: Vec<f64>,
        angle_deg: Vec<f64>,
        power_db: Vec<Vec<f64>>,
        meta: serde_json::Map<String, serde_json::Value>,
    ) -> Result<Self> {
        let p = Self {
            delay_ns,
            angle_deg,
            power_db,
            meta,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        check_axis("delay_ns", &self.delay_ns)?;
        check_axis("angle_deg", &self.angle_deg)?;
        if self.power_db.len() != self.delay_ns.len() {
            return Err(Error::Validation(format!(
                "power grid has {} rows but delay axis has {} bins",
                self.power_db.len(),
                self.delay_ns.len()
            )));
        }
        for (i, row) in self.power_db.iter().enumerate() {
            if row.len() != self.angle_deg.len() {
                return Err(Error::Validation(format!(
                    "power row {} has {} entries but angle axis has {} bins",
                    i,
                    row.len(),
                    self.angle_deg.len()
                )));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "non-finite power at delay bin {i}, angle bin {j}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_delay(&self) -> usize {
        self.delay_ns.len()
    }

    pub fn n_angle(&self) -> usize {
        self.angle_deg.len()
    }

    pub fn delay_step(&self) -> f64 {
        self.delay_ns[1] - self.delay_ns[0]
    }

    pub fn angle_step(&self) -> f64 {
        self.angle_deg[1] - self.angle_deg[0]
    }

    /// Bilinear interpolation of the power field at an arbitrary in-grid
    /// delay-angle position.
    pub fn bilinear(&self, tau_ns: f64, phi_deg: f64) -> f64 {
        let fi = ((tau_ns - self.delay_ns[0]) / self.delay_step())
            .clamp(0.0, (self.n_delay() - 1) as f64);
        let fj = ((phi_deg - self.angle_deg[0]) / self.angle_step())
            .clamp(0.0, (self.n_angle() - 1) as f64);
        let i = (fi.floor() as usize).min(self.n_delay() - 2);
        let j = (fj.floor() as usize).min(self.n_angle() - 2);
        let u = fi - i as f64;
        let v = fj - j as f64;
        let g = &self.power_db;
        g[i][j] * (1.0 - u) * (1.0 - v)
            + g[i + 1][j] * u * (1.0 - v)
            + g[i][j + 1] * (1.0 - u) * v
            + g[i + 1][j + 1] * u * v
    }

    /// Grid nodes with power strictly above the threshold, in row-major
    /// (delay bin, angle bin) order. Downstream artifacts reference samples
    /// by index into this list.
    pub fn denoise(&self, threshold_db: f64) -> Vec<MpcSample> {
        let mut out = Vec::new();
        for (i, row) in self.power_db.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if p > threshold_db {
                    out.push(MpcSample {
                        tau_ns: self.delay_ns[i],
                        phi_deg: self.angle_deg[j],
                        power_db: p,
                        grid_index: (i, j),
                    });
                }
            }
        }
        out
    }

    pub fn load(path: &Path, format: PdapFormat) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.display().to_string();
        match format {
            PdapFormat::Json => Self::from_json_str(&text, &name),
            PdapFormat::Csv => Self::from_csv_str(&text, &name),
        }
    }

    pub fn save(&self, path: &Path, format: PdapFormat) -> Result<()> {
        let text = match format {
            PdapFormat::Json => self.to_json_string(),
            PdapFormat::Csv => self.to_csv_string(),
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_str(text: &str, source: &str) -> Result<Self> {
        let p: Pdap = serde_json::from_str(text).map_err(|e| {
            Error::parse(source, format!("line {}, column {}", e.line(), e.column()), e.to_string())
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("pdap serializes");
        s.push('\n');
        s
    }

    /// CSV layout: header `delay_ns\angle_deg` followed by the angle axis;
    /// each data row is a delay value followed by that row of powers.
    /// Metadata is not representable in CSV and is dropped.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        s.push_str("delay_ns\\angle_deg");
        for a in &self.angle_deg {
            let _ = write!(s, ",{a}");
        }
        s.push('\n');
        for (d, row) in self.delay_ns.iter().zip(&self.power_db) {
            let _ = write!(s, "{d}");
            for p in row {
                let _ = write!(s, ",{p}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv_str(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source, "line 1", "empty file"))?;
        let mut cells = header.split(',');
        let first = cells.next().unwrap_or("");
        if first != "delay_ns\\angle_deg" {
            return Err(Error::parse(
                source,
                "line 1, field 1",
                format!("expected header cell 'delay_ns\\angle_deg', got '{first}'"),
            ));
        }
        let angle_deg = cells
            .enumerate()
            .map(|(k, c)| parse_f64(c, source, 1, k + 2))
            .collect::<Result<Vec<_>>>()?;
        let mut delay_ns = Vec::new();
        let mut power_db = Vec::new();
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let d = parse_f64(cells.next().unwrap_or(""), source, lineno + 1, 1)?;
            let row = cells
                .enumerate()
                .map(|(k, c)| parse_f64(c, source, lineno + 1, k + 2))
                .collect::<Result<Vec<_>>>()?;
            delay_ns.push(d);
            power_db.push(row);
        }
        Pdap::new(delay_ns, angle_deg, power_db, serde_json::Map::new())
    }
}

fn parse_f64(cell: &str, source: &str, line: usize, field: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        Error::parse(
            source,
            format!("line {line}, field {field}"),
            format!("invalid number '{cell}'"),
        )
    })
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::Validation(format!(
            "{name} axis needs at least 2 bins, got {}",
            axis.len()
        )));
    }
    if let Some(v) = axis.iter().find(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{name} axis has non-finite value {v}")));
    }
    let step = axis[1] - axis[0];
    if step <= 0.0 {
        return Err(Error::Validation(format!("{name} axis is not increasing")));
    }
    let tol = step.abs() * 1e-9;
    for w in axis.windows(2) {
        if ((w[1] - w[0]) - step).abs() > tol {
            return Err(Error::Validation(format!(
                "{name} axis is not uniform: step {} then {}",
                step,
                w[1] - w[0]
            )));
        }
    }
    Ok(())
}

/// Population standard deviations and ranges of the sample set.
///
/// Requires at least two samples and nonzero spread on both axes; all
/// sigma-normalized distances divide by these values.
pub fn normalization_context(samples: &[MpcSample]) -> Result<NormalizationContext> {
    if samples.len() < 2 {
        return Err(Error::Validation(format!(
            "normalization context needs >= 2 samples, got {}",
            samples.len()
        )));
    }
    let sigma_tau = population_stdev(samples.iter().map(|s| s.tau_ns));
    let sigma_phi = population_stdev(samples.iter().map(|s| s.phi_deg));
    if sigma_tau == 0.0 {
        return Err(Error::DegenerateAxis("all sample delays identical".into()));
    }
    if sigma_phi == 0.0 {
        return Err(Error::DegenerateAxis("all sample angles identical".into()));
    }
    let delay_range = min_max(samples.iter().map(|s| s.tau_ns));
    let angle_range = min_max(samples.iter().map(|s| s.phi_deg));
    Ok(NormalizationContext {
        sigma_tau,
        sigma_phi,
        delay_range,
        angle_range,
    })
}

fn population_stdev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}
