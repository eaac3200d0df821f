//! Case files: a TOML description of one experiment and the pipeline that runs it.
//!
//! ```toml
//! [manifold]
//! kind = "torus"          # torus | sphere | disc
//! n_s = 256
//! n_phi = 256
//!
//! [interface]
//! kind = "parallel_pair"  # parallel_pair | latitude | circle
//! offset = 0.25
//!
//! [well]
//! kind = "quartic"        # quartic | asymmetric | polynomial
//!
//! [solver]
//! method = "newton"
//! symmetry = ["mirror_x1", "mirror_x2", "half_shift_odd"]
//! eps = [0.1, 0.07, 0.05, 0.035]
//!
//! [assertions]
//! energy_intercept = { target = 5.333333333333333, rel_tol = 0.03 }
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    energy, format_value, gradient_consistency, hausdorff_distance, linear_fit, nodal_set, read_table, write_expansion,
    ExpansionRow,
};
use crate::error::{Error, Result};
use crate::geometry::{
    eikonal_check, jacobi_assemble, laplacian_curvature_check, nondegeneracy_check, signed_distance,
    volume_nondegeneracy_check, Interface, ManifoldGrid, Symmetry,
};
use crate::potential::{asymmetric_test_well, make_standard_well, DoubleWell};
use crate::profile::{compute_profile, default_t_max, Profile};
use crate::solver::{continuation, InterfaceBounds, Method, Mode, Problem, SolveConfig, SolverState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub manifold: ManifoldSection,
    pub interface: InterfaceSection,
    pub well: WellSection,
    #[serde(default)]
    pub profile: ProfileSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub assertions: Assertions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldName {
    Torus,
    Sphere,
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSection {
    pub kind: ManifoldName,
    pub n_s: usize,
    pub n_phi: usize,
    /// torus periods along `x1` and `x2`
    #[serde(default = "unit")]
    pub p1: f64,
    #[serde(default = "unit")]
    pub p2: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterfaceSection {
    ParallelPair { offset: f64 },
    Latitude { theta0: f64 },
    Circle { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WellSection {
    Quartic,
    Asymmetric,
    /// coefficients in increasing degree
    Polynomial { coefficients: Vec<f64>, wells: [f64; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(default = "default_points")]
    pub n_points: usize,
    #[serde(default)]
    pub t_max: Option<f64>,
}

fn default_points() -> usize {
    4001
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { n_points: default_points(), t_max: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_method")]
    pub method: Method,
    /// omitted means unconstrained
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub symmetry: Vec<Symmetry>,
    pub eps: Vec<f64>,
    #[serde(default = "default_tol_r")]
    pub tol_r: f64,
    #[serde(default = "default_tol_c")]
    pub tol_c: f64,
    #[serde(default = "default_max_newton")]
    pub max_newton: usize,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default)]
    pub bounds: Option<InterfaceBounds>,
}

fn default_method() -> Method {
    Method::Newton
}
fn default_tol_r() -> f64 {
    SolveConfig::default().tol_r
}
fn default_tol_c() -> f64 {
    SolveConfig::default().tol_c
}
fn default_max_newton() -> usize {
    SolveConfig::default().max_newton
}
fn default_max_outer() -> usize {
    SolveConfig::default().max_outer
}

/// Target with a relative or absolute tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub target: f64,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
}

impl Target {
    pub fn tolerance(&self) -> f64 {
        match (self.rel_tol, self.abs_tol) {
            (Some(r), Some(a)) => (r * self.target.abs()).max(a),
            (Some(r), None) => r * self.target.abs(),
            (None, Some(a)) => a,
            (None, None) => 0.0,
        }
    }

    pub fn holds(&self, value: f64) -> bool {
        value.is_finite() && (value - self.target).abs() <= self.tolerance()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    /// intercept of the line fitted to `lambda` against `eps`
    #[serde(default)]
    pub lambda_intercept: Option<Target>,
    /// intercept of the line fitted to `E / eps` against `eps`
    #[serde(default)]
    pub energy_intercept: Option<Target>,
    /// slope of `log hausdorff` against `log eps`
    #[serde(default)]
    pub hausdorff_slope: Option<Target>,
    #[serde(default)]
    pub max_volume_gap: Option<f64>,
    #[serde(default)]
    pub max_gradient_error: Option<f64>,
    /// golden table, relative to the case file
    #[serde(default)]
    pub golden: Option<PathBuf>,
    #[serde(default)]
    pub golden_rel_tol: Option<f64>,
}

impl CaseConfig {
    /// Parse and validate; errors name the offending field and line.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: CaseConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.manifold;
        if m.n_s < 4 || m.n_phi == 0 {
            return Err(Error::config("manifold.n_s", "grid needs at least 4 nodes along s and 1 along phi"));
        }
        let ok = matches!(
            (m.kind, self.interface),
            (ManifoldName::Torus, InterfaceSection::ParallelPair { .. })
                | (ManifoldName::Sphere, InterfaceSection::Latitude { .. })
                | (ManifoldName::Disc, InterfaceSection::Circle { .. })
        );
        if !ok {
            return Err(Error::config("interface.kind", "interface kind does not fit the manifold"));
        }
        if self.profile.n_points < 2048 {
            return Err(Error::config("profile.n_points", "need at least 2048 profile nodes"));
        }
        if self.solver.eps.is_empty() {
            return Err(Error::config("solver.eps", "schedule is empty"));
        }
        self.solve_config().validate()
    }

    pub fn solve_config(&self) -> SolveConfig {
        let s = &self.solver;
        SolveConfig {
            mode: match s.c0 {
                Some(c0) => Mode::VolumeConstrained { c0 },
                None => Mode::Unconstrained,
            },
            symmetry: s.symmetry.clone(),
            tol_r: s.tol_r,
            tol_c: s.tol_c,
            max_newton: s.max_newton,
            max_outer: s.max_outer,
            continuation_eps: s.eps.clone(),
            bounds: s.bounds.unwrap_or_default(),
        }
    }

    pub fn grid(&self) -> Result<ManifoldGrid> {
        let m = &self.manifold;
        match m.kind {
            ManifoldName::Torus => ManifoldGrid::torus(m.p1, m.p2, m.n_s, m.n_phi),
            ManifoldName::Sphere => ManifoldGrid::sphere(m.n_s, m.n_phi),
            ManifoldName::Disc => ManifoldGrid::disc(m.n_s, m.n_phi),
        }
    }

    pub fn interface(&self, grid: &ManifoldGrid) -> Result<Interface> {
        match self.interface {
            InterfaceSection::ParallelPair { offset } => Interface::parallel_pair(grid, offset),
            InterfaceSection::Latitude { theta0 } => Interface::latitude(grid, theta0),
            InterfaceSection::Circle { radius } => Interface::circle(grid, radius),
        }
    }

    pub fn well(&self) -> Result<DoubleWell> {
        well_from(&self.well)
    }

    pub fn profile(&self) -> Result<Profile> {
        let w = self.well()?;
        let t_max = match self.profile.t_max {
            Some(t) => t,
            None => default_t_max(&w)?,
        };
        compute_profile(&w, t_max, self.profile.n_points)
    }

    pub fn problem(&self) -> Result<Problem> {
        let grid = self.grid()?;
        let iface = self.interface(&grid)?;
        Problem::new(grid, &self.solver.symmetry, self.profile()?, iface)
    }
}

pub fn well_from(section: &WellSection) -> Result<DoubleWell> {
    match section {
        WellSection::Quartic => Ok(make_standard_well()),
        WellSection::Asymmetric => Ok(asymmetric_test_well()),
        WellSection::Polynomial { coefficients, wells } => DoubleWell::from_coefficients(coefficients, (wells[0], wells[1])),
    }
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let message = e.message().to_string();
    let start = e.span().map(|s| s.start.min(text.len()));
    let line = start.map(|s| text[..s].lines().count().max(1));
    // serde names missing or unknown keys in backticks; for bad values the
    // span points at the value, so take the key and table from the source
    let named = message.starts_with("missing field") || message.starts_with("unknown field");
    let field = if named {
        message.split('`').nth(1).map(String::from)
    } else {
        start.and_then(|s| key_at(text, s))
    }
    .unwrap_or_else(|| "<document>".into());
    let message = match line {
        Some(l) => format!("line {l}: {message}"),
        None => message,
    };
    Error::Config { field, message }
}

/// Dotted `table.key` for the assignment containing byte offset `pos`.
fn key_at(text: &str, pos: usize) -> Option<String> {
    let line_start = text[..pos].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let key = line.split_once('=')?.0.trim();
    if key.is_empty() || key.starts_with('[') {
        return None;
    }
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && !l.starts_with("[["))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim());
    Some(match table {
        Some(t) => format!("{t}.{key}"),
        None => key.to_string(),
    })
}

/// One geometry identity or verdict.
#[derive(Debug, Clone, Serialize)]
pub struct GeometryReport {
    pub eikonal_error: f64,
    pub curvature_error: f64,
    pub jacobi_min_value: f64,
    pub jacobi_class_dimension: usize,
    pub nondegenerate: bool,
}

pub fn geometry_report(pb: &Problem, mode: Mode) -> Result<GeometryReport> {
    let grid = pb.grid();
    let chart = signed_distance(grid, &pb.reference)?;
    let j = jacobi_assemble(grid, &pb.reference)?;
    let sym = pb.node_symmetry()?;
    let nd = match mode {
        Mode::Unconstrained => nondegeneracy_check(&j, Some(&sym)),
        Mode::VolumeConstrained { .. } => volume_nondegeneracy_check(&j, Some(&sym)),
    };
    Ok(GeometryReport {
        eikonal_error: eikonal_check(grid, &chart).max_error,
        curvature_error: laplacian_curvature_check(grid, &chart).max_error,
        jacobi_min_value: nd.min_value,
        jacobi_class_dimension: nd.dimension,
        nondegenerate: nd.nondegenerate,
    })
}

/// Table row for a converged state.
pub fn expansion_row(pb: &Problem, mode: Mode, st: &SolverState) -> Result<ExpansionRow> {
    let grid = pb.grid();
    let set = nodal_set(grid, &st.u)?;
    let gap = match mode {
        Mode::Unconstrained => 0.0,
        Mode::VolumeConstrained { .. } => st.constraint_gap,
    };
    Ok(ExpansionRow {
        eps: st.eps,
        energy: energy(grid, pb.well(), st.eps, &st.u),
        lambda: st.lambda,
        nodal_hausdorff: hausdorff_distance(grid, &set, &pb.reference),
        volume_gap: gap,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub geometry: GeometryReport,
    pub rows: Vec<ExpansionRow>,
    pub gradient_error: f64,
    pub assertions: Vec<AssertionOutcome>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Plain-text summary, one assertion per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        let _ = writeln!(s, "geometry: eikonal {:.3e}, curvature {:.3e}", g.eikonal_error, g.curvature_error);
        let _ = writeln!(
            s,
            "jacobi: min {:.6e} on a class of dimension {} ({})",
            g.jacobi_min_value,
            g.jacobi_class_dimension,
            if g.nondegenerate { "nondegenerate" } else { "degenerate" }
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "eps {} energy {} lambda {} hausdorff {} volume_gap {}",
                r.eps,
                format_value(r.energy),
                format_value(r.lambda),
                format_value(r.nodal_hausdorff),
                format_value(r.volume_gap)
            );
        }
        let _ = writeln!(s, "gradient consistency: {:.3e}", self.gradient_error);
        for a in &self.assertions {
            let _ = writeln!(
                s,
                "{} {}: value {} target {} tolerance {}",
                if a.passed { "PASS" } else { "FAIL" },
                a.name,
                format_value(a.value),
                format_value(a.target),
                format_value(a.tolerance)
            );
        }
        s
    }
}

/// Checks declared in `[assertions]` against a finished sweep.
pub fn evaluate_assertions(
    a: &Assertions,
    rows: &[ExpansionRow],
    gradient_error: f64,
    base: Option<&Path>,
) -> Result<Vec<AssertionOutcome>> {
    let mut out = Vec::new();
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let mut push_target = |name: &str, value: f64, t: &Target| {
        out.push(AssertionOutcome {
            name: name.into(),
            value,
            target: t.target,
            tolerance: t.tolerance(),
            passed: t.holds(value),
        });
    };
    let intercept = |y: Vec<f64>| linear_fit(&eps, &y).map(|f| f.intercept).unwrap_or(f64::NAN);
    if let Some(t) = &a.lambda_intercept {
        push_target("lambda_intercept", intercept(rows.iter().map(|r| r.lambda).collect()), t);
    }
    if let Some(t) = &a.energy_intercept {
        push_target("energy_intercept", intercept(rows.iter().map(|r| r.energy / r.eps).collect()), t);
    }
    if let Some(t) = &a.hausdorff_slope {
        let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.nodal_hausdorff.ln()).collect();
        let slope = if y.iter().all(|v| v.is_finite()) {
            linear_fit(&x, &y).map(|f| f.slope).unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };
        push_target("hausdorff_slope", slope, t);
    }
    let mut push_max = |name: &str, value: f64, limit: f64| {
        out.push(AssertionOutcome {
            name: name.into(),
            value,
            target: 0.0,
            tolerance: limit,
            passed: value.is_finite() && value <= limit,
        });
    };
    if let Some(limit) = a.max_volume_gap {
        push_max("max_volume_gap", rows.iter().map(|r| r.volume_gap.abs()).fold(0.0, f64::max), limit);
    }
    if let Some(limit) = a.max_gradient_error {
        push_max("max_gradient_error", gradient_error, limit);
    }
    if let Some(golden) = &a.golden {
        let path = match base {
            Some(b) => b.join(golden),
            None => golden.clone(),
        };
        let (_, want) = read_table(&path)?;
        let tol = a.golden_rel_tol.unwrap_or(1e-8);
        let got: Vec<[f64; 5]> = rows
            .iter()
            .map(|r| [r.eps, r.energy, r.lambda, r.nodal_hausdorff, r.volume_gap])
            .collect();
        let mut worst = if want.len() == got.len() { 0.0 } else { f64::INFINITY };
        for (w, g) in want.iter().zip(&got) {
            // energy and lambda carry the physics; the other columns sit near round-off
            for c in [0, 1, 2] {
                let scale = w[c].abs().max(1.0);
                worst = f64::max(worst, (w[c] - g[c]).abs() / scale);
            }
            for c in [3, 4] {
                worst = f64::max(worst, (w[c] - g[c]).abs() - 1e-9);
            }
        }
        push_max("golden", worst.max(0.0), tol);
    }
    Ok(out)
}

pub const GRADIENT_DIRECTIONS: usize = 10;

/// Full pipeline: profile, geometry checks, sweep, table and assertions.
/// Writes `table.csv`, `state.json` and `report.txt` into `out`.
pub fn run_case(cfg: &CaseConfig, base: Option<&Path>, out: &Path, seed: u64) -> Result<RunReport> {
    std::fs::create_dir_all(out)?;
    let pb = cfg.problem()?;
    let solve = cfg.solve_config();
    let geometry = geometry_report(&pb, solve.mode)?;
    let states = continuation(&pb, &solve, cfg.solver.method)?;
    let rows = states
        .iter()
        .map(|st| expansion_row(&pb, solve.mode, st))
        .collect::<Result<Vec<_>>>()?;
    write_expansion(&out.join("table.csv"), &rows)?;
    let last = states.last().expect("schedule is non-empty");
    std::fs::write(out.join("state.json"), serde_json::to_string(last)?)?;
    // the converged state is critical, so the check runs on the approximate solution
    let u_app = pb.approximate(last.eps, None)?;
    let gradient_error = gradient_consistency(pb.grid(), pb.well(), last.eps, &u_app, GRADIENT_DIRECTIONS, seed);
    let assertions = evaluate_assertions(&cfg.assertions, &rows, gradient_error, base)?;
    let report = RunReport { geometry, rows, gradient_error, assertions };
    std::fs::write(out.join("report.txt"), report.render())?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Load a case file and run it; golden paths resolve next to the file.
pub fn run_config(path: &Path, out: &Path, seed: u64) -> Result<RunReport> {
    let cfg = CaseConfig::load(path)?;
    run_case(&cfg, path.parent(), out, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TORUS: &str = r#"
[manifold]
kind = "torus"
n_s = 64
n_phi = 4

[interface]
kind = "parallel_pair"
offset = 0.25

[well]
kind = "quartic"

[solver]
symmetry = ["mirror_x1", "mirror_x2", "half_shift_odd"]
eps = [0.1, 0.08]

[assertions]
energy_intercept = { target = 5.333333333333333, rel_tol = 0.05 }
max_gradient_error = 1e-6
"#;

    #[test]
    fn parses_and_runs_a_small_case() {
        let cfg = CaseConfig::parse(TORUS).unwrap();
        assert_eq!(cfg.profile.n_points, 4001);
        assert_eq!(cfg.solve_config().mode, Mode::Unconstrained);
        let dir = tempfile::tempdir().unwrap();
        let rep = run_case(&cfg, None, dir.path(), 1).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.passed(), "{}", rep.render());
        let (_, rows) = read_table(&dir.path().join("table.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        // bit-identical on a rerun
        let again = tempfile::tempdir().unwrap();
        run_case(&cfg, None, again.path(), 1).unwrap();
        let a = std::fs::read(dir.path().join("table.csv")).unwrap();
        let b = std::fs::read(again.path().join("table.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_section_names_the_field() {
        let text = TORUS.replace("[well]\nkind = \"quartic\"\n", "");
        match CaseConfig::parse(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "well"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = TORUS.replace("offset = 0.25", "offset = 0.25\nwidth = 3");
        match CaseConfig::parse(&text) {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "width");
                assert!(message.starts_with("line "), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_names_table_and_key() {
        let text = TORUS.replace("kind = \"quartic\"", "kind = \"sextic\"");
        match CaseConfig::parse(&text) {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "well.kind");
                assert!(message.contains("sextic"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_interface_is_rejected() {
        let text = TORUS.replace("kind = \"torus\"", "kind = \"sphere\"");
        assert!(matches!(CaseConfig::parse(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn target_tolerances() {
        let t = Target { target: 2.0, rel_tol: None, abs_tol: Some(0.3) };
        assert!(t.holds(2.29) && !t.holds(1.6) && !t.holds(f64::NAN));
        let r = Target { target: 0.4, rel_tol: Some(0.03), abs_tol: None };
        assert!(r.holds(0.41) && !r.holds(0.42));
    }
}
