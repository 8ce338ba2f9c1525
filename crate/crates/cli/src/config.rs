//! Run configuration: one JSON document, unknown keys rejected, every default filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use slabdecay::dispersion::DispersionOptions;
use slabdecay::stokes1d::EvolveOptions;
use slabdecay::symbols::{SlabParams, Symbol};
use slabdecay::synthesis::{InitialDataSpec, PlaneQuadrature, SynthesisOptions};

use crate::acceptance::VerifyOptions;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlabSpec {
    pub ell: f64,
    pub dim: usize,
}

impl Default for SlabSpec {
    fn default() -> Self {
        Self { ell: 1.0, dim: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionSpec {
    pub moduli: Vec<f64>,
}

impl Default for DispersionSpec {
    fn default() -> Self {
        Self { moduli: (0..8).map(|k| f64::from(1u32 << k)).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// `u = 0`, `h = amplitude`
    Surface,
    Zero,
    /// `w = y(2l - y)/l^2`, `v = 0`, `h = 0`
    Heat,
    /// slow dispersion mode scaled to `h = amplitude`
    Mode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSpec {
    pub xi_mod: f64,
    pub n_cells: usize,
    pub t_end: f64,
    /// defaults to `0.05 / max(|rho_est|, 1)`
    pub dt: Option<f64>,
    pub initial: InitialKind,
    pub amplitude: f64,
    /// defaults to `[T/4, T]`
    pub fit_window: Option<(f64, f64)>,
}

impl Default for EvolveSpec {
    fn default() -> Self {
        Self { xi_mod: 1.0, n_cells: 128, t_end: 5.0, dt: None, initial: InitialKind::Surface, amplitude: 1.0, fit_window: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Torus,
    Plane,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub domain: Domain,
    pub data: InitialDataSpec<f64>,
    pub lattice_radius: usize,
    pub quadrature: PlaneQuadrature<f64>,
    pub t_end: f64,
    /// largest per-mode step
    pub dt: f64,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        Self {
            domain: Domain::Torus,
            data: InitialDataSpec::sobolev(2.0),
            lattice_radius: 12,
            quadrature: PlaneQuadrature::default(),
            t_end: 10.0,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub dispersion: DispersionOptions<f64>,
    pub evolve: EvolveOptions<f64>,
    pub synthesis: SynthesisOptions<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub slab: SlabSpec,
    pub symbol: Symbol<f64>,
    /// CSV table for a tabulated symbol, relative to the config file
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbol_table: Option<PathBuf>,
    pub dispersion: DispersionSpec,
    pub evolve: EvolveSpec,
    pub synthesis: SynthesisSpec,
    pub verify: VerifyOptions,
    pub tolerances: Tolerances,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            slab: SlabSpec::default(),
            symbol: Symbol::fractional(1.0, 1.0, 0.5),
            symbol_table: None,
            dispersion: DispersionSpec::default(),
            evolve: EvolveSpec::default(),
            synthesis: SynthesisSpec::default(),
            verify: VerifyOptions::default(),
            tolerances: Tolerances::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Self::parse(text, Path::new("."))
    }

    fn parse(text: &str, base: &Path) -> anyhow::Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        if let Some(rel) = &cfg.symbol_table {
            let table = Symbol::load_table_csv(&base.join(rel)).map_err(|e| anyhow::anyhow!("symbol table: {e}"))?;
            cfg.symbol.table = Some(table);
        }
        cfg.symbol.check().map_err(|e| anyhow::anyhow!("symbol: {e}"))?;
        cfg.slab_params()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    pub fn slab_params(&self) -> anyhow::Result<SlabParams<f64>> {
        SlabParams::new(self.slab.ell, self.slab.dim, self.symbol.clone()).map_err(|e| anyhow::anyhow!("slab: {e}"))
    }

    pub fn synthesis_options(&self) -> SynthesisOptions<f64> {
        let mut o = self.tolerances.synthesis.clone();
        o.dispersion = self.tolerances.dispersion.clone();
        o.evolve = self.tolerances.evolve.clone();
        o
    }

    /// Resolved config as canonical JSON (all defaults present, fixed key order).
    pub fn resolved_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.dispersion.moduli.len(), 8);
        assert_eq!(c.slab.dim, 3);
        // defaults are echoed
        let v: serde_json::Value = serde_json::from_str(&c.resolved_json()).unwrap();
        assert_eq!(v["tolerances"]["dispersion"]["scan_points"], 512);
        assert_eq!(v["tolerances"]["evolve"]["c_beta"], 0.01);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"slab": {"ell": 1.0, "depth": 2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"tolerances": {"evolve": {"theta": 0.5, "x": 1}}}"#).is_err());
    }

    #[test]
    fn invalid_symbol_rejected() {
        assert!(RunConfig::from_json(r#"{"symbol": {"family": "fractional", "g": -1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"slab": {"ell": 0.0}}"#).is_err());
    }

    #[test]
    fn table_loads_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mu.csv"), "xi,mu\n0,1\n1,2\n2,3\n").unwrap();
        let cfg = dir.path().join("run.json");
        std::fs::write(&cfg, r#"{"symbol": {"family": "tabulated", "theta": 0.1}, "symbol_table": "mu.csv"}"#).unwrap();
        let c = RunConfig::load(&cfg).unwrap();
        assert_eq!(c.symbol.table.as_ref().unwrap().len(), 3);
        assert_eq!(c.slab_params().unwrap().mu(1.0).unwrap(), 2.0);
    }

    #[test]
    fn roundtrip_is_stable() {
        let c = RunConfig::from_json(r#"{"symbol": {"family": "log_corrected", "alpha": 2.0}, "seed": 7}"#).unwrap();
        let j = c.resolved_json();
        assert_eq!(RunConfig::from_json(&j).unwrap().resolved_json(), j);
    }
}
