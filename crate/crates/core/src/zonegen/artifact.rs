//! Plain-text zone artifacts.
//!
//! ```text
//! zempc-zone 1
//! delta = 30
//! base_lo = 0 348
//! base_hi = 1 352
//! resolution = 50 50
//! ...
//! cells
//! <cell index> <certified input index>
//! end
//! ```
//!
//! Header lines are `key = value` with whitespace-separated numbers; floats use the
//! shortest representation that parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;

use super::covering::{build_covering, CellMask, CellRange, FiniteCovering};
use super::{EconomicZone, InflationKind};
use crate::error::{Result, ZempcError};
use crate::interval::IntervalBox;
use crate::steadystate::SteadyState;

const MAGIC: &str = "zempc-zone 1";

/// Serializable summary of an economic zone and, optionally, its steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneArtifact {
    pub delta: f64,
    pub covering: FiniteCovering,
    pub input_box: IntervalBox,
    pub input_points: usize,
    pub criterion: String,
    pub deviation: String,
    pub inflation: String,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
    pub candidate_cells: usize,
    pub kept: CellMask,
    pub certificates: Vec<Option<usize>>,
    pub inner_box: IntervalBox,
    pub inner_range: CellRange,
    pub steady_state: Option<SteadyState>,
}

impl ZoneArtifact {
    pub fn from_zone(zone: &EconomicZone, input_box: &IntervalBox, steady_state: Option<SteadyState>) -> Self {
        let inflation = match zone.options.inflation {
            InflationKind::Local { margin } => format!("local {margin}"),
            InflationKind::Isotropic => match zone.lipschitz {
                Some(est) => format!("isotropic {} {}", est.l_x, est.l_w),
                None => "isotropic".into(),
            },
        };
        Self {
            delta: zone.delta,
            covering: zone.covering.clone(),
            input_box: input_box.clone(),
            input_points: zone.options.input_points,
            criterion: zone.options.criterion.name().into(),
            deviation: zone.options.deviation.name().into(),
            inflation,
            c1: zone.options.c1,
            c2: zone.options.c2,
            seed: zone.options.seed,
            candidate_cells: zone.candidates.count(),
            kept: zone.kept.clone(),
            certificates: zone.certificates.clone(),
            inner_box: zone.inner_box.clone(),
            inner_range: zone.inner_range.clone(),
            steady_state,
        }
    }

    pub fn to_text(&self) -> String {
        let join_f = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let join_u = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let base = self.covering.base_box();
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "delta = {:?}", self.delta);
        let _ = writeln!(s, "dims = {}", self.covering.dim());
        let _ = writeln!(s, "base_lo = {}", join_f(base.lo()));
        let _ = writeln!(s, "base_hi = {}", join_f(base.hi()));
        let _ = writeln!(s, "resolution = {}", join_u(self.covering.resolution()));
        let _ = writeln!(s, "input_lo = {}", join_f(self.input_box.lo()));
        let _ = writeln!(s, "input_hi = {}", join_f(self.input_box.hi()));
        let _ = writeln!(s, "input_points = {}", self.input_points);
        let _ = writeln!(s, "criterion = {}", self.criterion);
        let _ = writeln!(s, "deviation = {}", self.deviation);
        let _ = writeln!(s, "inflation = {}", self.inflation);
        let _ = writeln!(s, "c1 = {:?}", self.c1);
        let _ = writeln!(s, "c2 = {:?}", self.c2);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "candidate_cells = {}", self.candidate_cells);
        let _ = writeln!(s, "kernel_cells = {}", self.kept.count());
        let _ = writeln!(s, "inner_lo = {}", join_f(self.inner_box.lo()));
        let _ = writeln!(s, "inner_hi = {}", join_f(self.inner_box.hi()));
        let _ = writeln!(s, "inner_range_lo = {}", join_u(&self.inner_range.lo));
        let _ = writeln!(s, "inner_range_hi = {}", join_u(&self.inner_range.hi));
        if let Some(ss) = &self.steady_state {
            let _ = writeln!(s, "steady_x = {}", join_f(&ss.x_s));
            let _ = writeln!(s, "steady_u = {}", join_f(&ss.u_s));
            let _ = writeln!(s, "steady_cost = {:?}", ss.cost);
            let _ = writeln!(s, "steady_residual = {:?}", ss.residual);
        }
        let _ = writeln!(s, "cells");
        for c in self.kept.indices() {
            match self.certificates.get(c).copied().flatten() {
                Some(j) => {
                    let _ = writeln!(s, "{c} {j}");
                }
                None => {
                    let _ = writeln!(s, "{c} -");
                }
            }
        }
        let _ = writeln!(s, "end");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let err = |line: usize, detail: String| ZempcError::Parse { line, detail };
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(err(n, format!("expected '{MAGIC}', found '{other}'"))),
            None => return Err(err(1, "empty artifact".into())),
        }
        let mut header: Vec<(usize, String, String)> = Vec::new();
        let mut in_cells = false;
        let mut cells: Vec<(usize, Option<usize>)> = Vec::new();
        let mut ended = false;
        for (n, line) in lines.by_ref() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !in_cells {
                if line == "cells" {
                    in_cells = true;
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| err(n, format!("expected 'key = value', found '{line}'")))?;
                header.push((n, k.trim().to_string(), v.trim().to_string()));
            } else if line == "end" {
                ended = true;
                break;
            } else {
                let mut parts = line.split_whitespace();
                let idx = parts
                    .next()
                    .and_then(|p| p.parse::<usize>().ok())
                    .ok_or_else(|| err(n, format!("bad cell index in '{line}'")))?;
                let cert = match parts.next() {
                    None | Some("-") => None,
                    Some(p) => Some(p.parse::<usize>().map_err(|_| err(n, format!("bad certificate in '{line}'")))?),
                };
                cells.push((idx, cert));
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "missing 'end' terminator".into()));
        }
        let get = |key: &str| -> Result<(usize, &str)> {
            header
                .iter()
                .find(|(_, k, _)| k == key)
                .map(|(n, _, v)| (*n, v.as_str()))
                .ok_or_else(|| err(0, format!("missing header key '{key}'")))
        };
        let floats = |key: &str| -> Result<Vec<f64>> {
            let (n, v) = get(key)?;
            v.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(n, format!("bad number '{t}' for '{key}'"))))
                .collect()
        };
        let ints = |key: &str| -> Result<Vec<usize>> {
            let (n, v) = get(key)?;
            v.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| err(n, format!("bad integer '{t}' for '{key}'"))))
                .collect()
        };
        let scalar = |key: &str| -> Result<f64> {
            let v = floats(key)?;
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(err(get(key)?.0, format!("'{key}' needs one value")))
            }
        };
        let int = |key: &str| -> Result<usize> {
            let v = ints(key)?;
            if v.len() == 1 {
                Ok(v[0])
            } else {
                Err(err(get(key)?.0, format!("'{key}' needs one value")))
            }
        };
        let boxed = |lo: &str, hi: &str| -> Result<IntervalBox> {
            let line = get(lo)?.0;
            IntervalBox::new(floats(lo)?, floats(hi)?).map_err(|e| err(line, e.to_string()))
        };

        let base = boxed("base_lo", "base_hi")?;
        let res_line = get("resolution")?.0;
        let covering = build_covering(&base, &ints("resolution")?).map_err(|e| err(res_line, e.to_string()))?;
        let n_cells = covering.n_cells();
        let mut kept = CellMask::empty(n_cells);
        let mut certificates = vec![None; n_cells];
        for (idx, cert) in cells {
            if idx >= n_cells {
                return Err(err(0, format!("cell index {idx} exceeds {n_cells} cells")));
            }
            kept.insert(idx);
            certificates[idx] = cert;
        }
        if kept.count() != int("kernel_cells")? {
            return Err(err(get("kernel_cells")?.0, "kernel_cells disagrees with the cell list".into()));
        }
        let steady_state = if header.iter().any(|(_, k, _)| k == "steady_x") {
            Some(SteadyState {
                x_s: floats("steady_x")?,
                u_s: floats("steady_u")?,
                cost: scalar("steady_cost")?,
                residual: scalar("steady_residual")?,
            })
        } else {
            None
        };
        let text_of = |key: &str| -> Result<String> { Ok(get(key)?.1.to_string()) };
        Ok(Self {
            delta: scalar("delta")?,
            covering,
            input_box: boxed("input_lo", "input_hi")?,
            input_points: int("input_points")?,
            criterion: text_of("criterion")?,
            deviation: text_of("deviation")?,
            inflation: text_of("inflation")?,
            c1: scalar("c1")?,
            c2: scalar("c2")?,
            seed: int("seed")? as u64,
            candidate_cells: int("candidate_cells")?,
            kept,
            certificates,
            inner_box: boxed("inner_lo", "inner_hi")?,
            inner_range: CellRange { lo: ints("inner_range_lo")?, hi: ints("inner_range_hi")? },
            steady_state,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| ZempcError::Config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ZempcError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// CSV of every covering cell: index, center coordinates, and membership flags.
pub fn cells_csv(zone: &EconomicZone, state_names: &[String]) -> String {
    let cov = &zone.covering;
    let mut s = String::from("cell");
    for i in 0..cov.dim() {
        let _ = write!(s, ",{}", state_names.get(i).cloned().unwrap_or_else(|| format!("x{i}")));
    }
    s.push_str(",candidate,kept,inner\n");
    for c in 0..cov.n_cells() {
        let m = cov.multi_index(c);
        let _ = write!(s, "{c}");
        for v in cov.cell_center(c) {
            let _ = write!(s, ",{v:.16e}");
        }
        let _ = writeln!(
            s,
            ",{},{},{}",
            zone.candidates.contains(c) as u8,
            zone.kept.contains(c) as u8,
            zone.inner_range.contains(&m) as u8
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::{ConstraintSpec, PlantModel};
    use crate::zonegen::{compute_economic_zone, ZoneOptions};
    use std::sync::Arc;

    fn small_zone() -> EconomicZone {
        let model = PlantModel::discrete("lin", 1, 1, 1, |x, u, w, o| o[0] = 1.5 * x[0] + u[0] + w[0]).unwrap();
        let spec = ConstraintSpec::new(
            IntervalBox::new(vec![-1.0], vec![1.0]).unwrap(),
            IntervalBox::new(vec![-0.1], vec![0.1]).unwrap(),
            IntervalBox::new(vec![-0.05], vec![0.05]).unwrap(),
        )
        .unwrap();
        let mut opts = ZoneOptions::new(vec![40]);
        opts.inflation = InflationKind::Local { margin: 1.0 };
        compute_economic_zone(&model, &spec, &spec.state_box, f64::INFINITY, Arc::new(|x: &[f64], _: &[f64]| x[0]), &opts)
            .unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let zone = small_zone();
        let ss = SteadyState { x_s: vec![0.1 + 0.2], u_s: vec![-1.0 / 3.0], cost: 0.3, residual: 1e-17 };
        let art = ZoneArtifact::from_zone(&zone, &IntervalBox::new(vec![-0.1], vec![0.1]).unwrap(), Some(ss));
        let back = ZoneArtifact::parse(&art.to_text()).unwrap();
        assert_eq!(back, art);
    }

    #[test]
    fn malformed_artifacts_name_the_line() {
        let art = ZoneArtifact::from_zone(&small_zone(), &IntervalBox::new(vec![-0.1], vec![0.1]).unwrap(), None);
        let text = art.to_text().replace("c2 = 10.0", "c2 = ten");
        match ZoneArtifact::parse(&text) {
            Err(ZempcError::Parse { line, detail }) => {
                assert_eq!(text.lines().nth(line - 1).unwrap(), "c2 = ten");
                assert!(detail.contains("c2"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let truncated: String = art.to_text().lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(ZoneArtifact::parse(&truncated).is_err());
        assert!(ZoneArtifact::parse("not an artifact").is_err());
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let zone = small_zone();
        let csv = cells_csv(&zone, &["x".into()]);
        assert_eq!(csv.lines().count(), 41);
        assert!(csv.starts_with("cell,x,candidate,kept,inner\n"));
        let kept_rows = csv.lines().skip(1).filter(|l| l.split(',').nth(3) == Some("1")).count();
        assert_eq!(kept_rows, zone.kept.count());
    }
}
