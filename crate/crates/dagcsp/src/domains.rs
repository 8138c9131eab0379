//! Axis-aligned boxes and labelled sample containers.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width given to dimensions whose sampled range is zero.
pub const DEGENERATE_FLOOR: f64 = 1e-9;

/// Closed axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::MalformedBox(format!(
                "lo has {} entries, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        for (k, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::MalformedBox(format!("non-finite bound in dimension {k}")));
            }
            if a > b {
                return Err(Error::MalformedBox(format!("lo > hi in dimension {k}")));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^d`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Self {
        Self { lo: vec![lo; d], hi: vec![hi; d] }
    }

    /// Zero-dimensional box, used for nodes without inputs or parameters.
    pub fn empty() -> Self {
        Self { lo: Vec::new(), hi: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    /// Map a point of the unit cube into the box.
    pub fn from_unit(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .enumerate()
            .map(|(k, &s)| self.lo[k] + s * (self.hi[k] - self.lo[k]))
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (k, xk) in x.iter_mut().enumerate() {
            *xk = xk.clamp(self.lo[k], self.hi[k]);
        }
    }

    /// Sub-box over the column range `r`.
    pub fn slice(&self, r: std::ops::Range<usize>) -> BoxDomain {
        BoxDomain { lo: self.lo[r.clone()].to_vec(), hi: self.hi[r].to_vec() }
    }

    /// Componentwise intersection; `None` when empty.
    pub fn intersect(&self, other: &BoxDomain) -> Option<BoxDomain> {
        if self.dim() != other.dim() {
            return None;
        }
        let lo: Vec<f64> = self.lo.iter().zip(&other.lo).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.hi.iter().zip(&other.hi).map(|(a, b)| a.min(*b)).collect();
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return None;
        }
        Some(BoxDomain { lo, hi })
    }
}

/// Interval hull of a point cloud, each width grown by `inflation * range`
/// (half on each side). Zero-range dimensions get the absolute floor.
pub fn interval_hull<'a, I>(points: I, inflation: f64) -> Result<BoxDomain>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = points.into_iter();
    let first = iter.next().ok_or(Error::EmptySampleSet)?;
    let mut lo = first.to_vec();
    let mut hi = first.to_vec();
    for p in iter {
        if p.len() != lo.len() {
            return Err(Error::Dim { expected: lo.len(), got: p.len() });
        }
        for k in 0..p.len() {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let alpha = inflation.max(0.0);
    for k in 0..lo.len() {
        let range = hi[k] - lo[k];
        if range <= 0.0 {
            lo[k] -= DEGENERATE_FLOOR;
            hi[k] += DEGENERATE_FLOOR;
        } else {
            lo[k] -= 0.5 * alpha * range;
            hi[k] += 0.5 * alpha * range;
        }
    }
    BoxDomain::new(lo, hi)
}

/// Cartesian product, concatenating bounds in order.
pub fn box_product(boxes: &[&BoxDomain]) -> BoxDomain {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for b in boxes {
        lo.extend_from_slice(&b.lo);
        hi.extend_from_slice(&b.hi);
    }
    BoxDomain { lo, hi }
}

pub fn contains(b: &BoxDomain, point: &[f64]) -> Result<bool> {
    if point.len() != b.dim() {
        return Err(Error::Dim { expected: b.dim(), got: point.len() });
    }
    Ok(contains_unchecked(b, point))
}

pub(crate) fn contains_unchecked(b: &BoxDomain, point: &[f64]) -> bool {
    point.iter().enumerate().all(|(k, &x)| b.lo[k] <= x && x <= b.hi[k])
}

/// What a block of sample columns represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnRole {
    /// Local parameters of a node.
    Param(usize),
    /// Payload carried on the edge `from -> to`.
    Input { from: usize, to: usize },
    /// Shared coupling variables carried by a lifted graph.
    Lift,
    /// Approximation-error variables carried by a lifted graph.
    ErrorLift,
}

impl fmt::Display for ColumnRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRole::Param(i) => write!(f, "v{i}"),
            ColumnRole::Input { from, to } => write!(f, "u{from}>{to}"),
            ColumnRole::Lift => write!(f, "z"),
            ColumnRole::ErrorLift => write!(f, "eps"),
        }
    }
}

impl ColumnRole {
    fn parse(tag: &str) -> Option<ColumnRole> {
        if tag == "z" {
            return Some(ColumnRole::Lift);
        }
        if tag == "eps" {
            return Some(ColumnRole::ErrorLift);
        }
        if let Some(rest) = tag.strip_prefix('v') {
            return rest.parse().ok().map(ColumnRole::Param);
        }
        if let Some(rest) = tag.strip_prefix('u') {
            let (a, b) = rest.split_once('>')?;
            return Some(ColumnRole::Input { from: a.parse().ok()?, to: b.parse().ok()? });
        }
        None
    }
}

/// Contiguous block of columns sharing a role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpan {
    pub role: ColumnRole,
    pub start: usize,
    pub len: usize,
}

impl RoleSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Labelled points stored row-major. Label −1 marks a feasible point.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
    pub labels: Vec<i8>,
    pub n_evaluations: u64,
    pub column_roles: Vec<RoleSpan>,
}

pub const FEASIBLE: i8 = -1;
pub const INFEASIBLE: i8 = 1;

impl SampleSet {
    pub fn new(dim: usize, column_roles: Vec<RoleSpan>) -> Self {
        Self { dim, data: Vec::new(), labels: Vec::new(), n_evaluations: 0, column_roles }
    }

    /// Untagged set with a single anonymous block per column.
    pub fn untagged(dim: usize) -> Self {
        Self::new(dim, Vec::new())
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>], labels: Vec<i8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Dim { expected: rows.len(), got: labels.len() });
        }
        let mut s = Self::untagged(dim);
        for (r, l) in rows.iter().zip(labels) {
            s.push(r, l)?;
        }
        s.n_evaluations = s.len() as u64;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, point: &[f64], label: i8) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::Dim { expected: self.dim, got: point.len() });
        }
        self.data.extend_from_slice(point);
        self.labels.push(label);
        Ok(())
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |k| self.row(k))
    }

    pub fn feasible_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).filter(move |&k| self.labels[k] == FEASIBLE).map(move |k| self.row(k))
    }

    pub fn feasible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.labels[k] == FEASIBLE).collect()
    }

    pub fn n_feasible(&self) -> usize {
        self.labels.iter().filter(|&&l| l == FEASIBLE).count()
    }

    pub fn span(&self, role: ColumnRole) -> Option<&RoleSpan> {
        self.column_roles.iter().find(|s| s.role == role)
    }

    /// Keep the columns whose role appears in `filter`, in their original order.
    pub fn project(&self, filter: &[ColumnRole]) -> Result<SampleSet> {
        for r in filter {
            if self.span(*r).is_none() {
                return Err(Error::StateMismatch(format!("unknown column role {r}")));
            }
        }
        let spans: Vec<&RoleSpan> =
            self.column_roles.iter().filter(|s| filter.contains(&s.role)).collect();
        let cols: Vec<usize> = spans.iter().flat_map(|s| s.range()).collect();
        let mut roles = Vec::new();
        let mut start = 0;
        for s in &spans {
            roles.push(RoleSpan { role: s.role, start, len: s.len });
            start += s.len;
        }
        self.select_columns(&cols, roles)
    }

    /// Keep the given column indices.
    pub fn select_columns(&self, cols: &[usize], roles: Vec<RoleSpan>) -> Result<SampleSet> {
        let mut out = SampleSet::new(cols.len(), roles);
        let mut buf = vec![0.0; cols.len()];
        for k in 0..self.len() {
            let r = self.row(k);
            for (j, &c) in cols.iter().enumerate() {
                buf[j] = *r.get(c).ok_or(Error::Dim { expected: self.dim, got: c + 1 })?;
            }
            out.push(&buf, self.labels[k])?;
        }
        out.n_evaluations = self.n_evaluations;
        Ok(out)
    }

    /// Rows at the given indices, keeping roles and evaluation count.
    pub fn subset(&self, idx: &[usize]) -> SampleSet {
        let mut out = SampleSet::new(self.dim, self.column_roles.clone());
        for &k in idx {
            out.data.extend_from_slice(self.row(k));
            out.labels.push(self.labels[k]);
        }
        out.n_evaluations = self.n_evaluations;
        out
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec![String::new(); self.dim];
        let mut covered = vec![false; self.dim];
        for s in &self.column_roles {
            for (j, c) in s.range().enumerate() {
                if c < self.dim {
                    h[c] = format!("{}.{}", s.role, j);
                    covered[c] = true;
                }
            }
        }
        for c in 0..self.dim {
            if !covered[c] {
                h[c] = format!("x.{c}");
            }
        }
        h.push("label".into());
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for k in 0..self.len() {
            let mut rec: Vec<String> = self.row(k).iter().map(|x| format!("{x:e}")).collect();
            rec.push(self.labels[k].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        let meta = serde_json::json!({ "n_evaluations": self.n_evaluations, "rows": self.len() });
        std::fs::write(sidecar(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<SampleSet> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header.last().map(String::as_str) != Some("label") {
            return Err(Error::Parse(format!("{}: missing label column", path.display())));
        }
        let dim = header.len() - 1;
        let mut roles: Vec<RoleSpan> = Vec::new();
        for (c, tag) in header[..dim].iter().enumerate() {
            let role = tag.rsplit_once('.').and_then(|(r, _)| ColumnRole::parse(r));
            if let Some(role) = role {
                match roles.last_mut() {
                    Some(s) if s.role == role && s.start + s.len == c => s.len += 1,
                    _ => roles.push(RoleSpan { role, start: c, len: 1 }),
                }
            }
        }
        let mut out = SampleSet::new(dim, roles);
        let mut buf = vec![0.0; dim];
        for rec in r.records() {
            let rec = rec?;
            for c in 0..dim {
                buf[c] = rec[c].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            }
            let label: i8 = rec[dim].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            out.push(&buf, label)?;
        }
        out.n_evaluations = match std::fs::read_to_string(sidecar(path)) {
            Ok(s) => {
                let v: serde_json::Value = serde_json::from_str(&s)?;
                v["n_evaluations"].as_u64().unwrap_or(out.len() as u64)
            }
            Err(_) => out.len() as u64,
        };
        Ok(out)
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    path.with_extension("meta.json")
}
