//! Run configuration and argument helpers shared by the subcommands.

use std::path::Path;

use serde::Deserialize;
use vardyn::calibration::CalibrationConfig;
use vardyn::market_data::IngestConfig;
use vardyn::montecarlo::SimConfig;
use vardyn::synthetic::SyntheticSpec;
use vardyn::DT;

/// Seed used when neither the command line nor the config file sets one.
pub const DEFAULT_SEED: u64 = 20_240_101;

/// Optional JSON config accepted by every subcommand through `--config`.
/// Command-line flags override the file; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub lambda_scale: Option<f64>,
    pub factors: Option<usize>,
    pub calibration: Option<CalibrationConfig>,
    pub ingest: Option<IngestConfig>,
    pub synthetic: Option<SyntheticSpec>,
    pub simulation: Option<SimConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(l) = self.lambda_scale {
            check_lambda(l)?;
        }
        if let Some(n) = self.factors {
            check_factors(n)?;
        }
        if let Some(c) = &self.calibration {
            c.validate().map_err(|e| e.to_string())?;
            if let Some(n) = self.factors {
                if n != c.n_factors() {
                    return Err(format!("factors = {n} but calibration has {} k grids", c.n_factors()));
                }
            }
        }
        if let Some(s) = &self.synthetic {
            if s.days < 2 || s.n_futures == 0 || !(s.xi0 > 0.0) {
                return Err("synthetic: days >= 2, n_futures >= 1 and xi0 > 0 are required".into());
            }
        }
        if let Some(s) = &self.simulation {
            check_sim(s)?;
        }
        Ok(())
    }

    /// Flag, then config, then the default.
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn lambda_scale(&self, flag: Option<f64>) -> Result<f64, String> {
        let l = flag.or(self.lambda_scale).unwrap_or(1.0);
        check_lambda(l)?;
        Ok(l)
    }

    pub fn ingest(&self) -> IngestConfig {
        self.ingest.clone().unwrap_or_default()
    }

    pub fn calibration(&self, factors: Option<usize>, seed: u64) -> Result<CalibrationConfig, String> {
        let n = factors.or(self.factors);
        let mut cfg = match (&self.calibration, n) {
            (Some(c), Some(n)) if c.n_factors() != n => {
                return Err(format!("--factors {n} conflicts with the {} configured k grids", c.n_factors()))
            }
            (Some(c), _) => c.clone(),
            (None, None | Some(2)) => CalibrationConfig::default(),
            (None, Some(1)) => CalibrationConfig::one_factor(one_factor_grid()),
            (None, Some(3)) => CalibrationConfig::three_factor(),
            (None, Some(n)) => return Err(format!("factor count must be 1, 2 or 3, got {n}")),
        };
        cfg.seed = seed;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn one_factor_grid() -> Vec<f64> {
    (1..=32).map(|i| 0.5 * i as f64).collect()
}

fn check_lambda(l: f64) -> Result<(), String> {
    if l.is_finite() && l >= 0.0 {
        Ok(())
    } else {
        Err(format!("lambda_scale must be finite and non-negative, got {l}"))
    }
}

fn check_factors(n: usize) -> Result<(), String> {
    if (1..=3).contains(&n) {
        Ok(())
    } else {
        Err(format!("factor count must be 1, 2 or 3, got {n}"))
    }
}

pub fn check_sim(s: &SimConfig) -> Result<(), String> {
    if s.paths == 0 || s.steps == 0 || s.chunk == 0 {
        return Err("simulation: paths, steps and chunk must be positive".into());
    }
    check_lambda(s.lambda_scale)?;
    if !(s.sigma_z > 0.0) {
        return Err("simulation: sigma_z must be positive".into());
    }
    Ok(())
}

/// Parses a tenor such as `10d`, `2w`, `3m`, `1y` or a bare number of years.
/// Days are business days; a month is 21 of them.
pub fn parse_tenor(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, unit) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => (&s[..i], Some(c.to_ascii_lowercase())),
        _ => (s, None),
    };
    let x: f64 = num.parse().map_err(|_| format!("bad tenor '{s}'"))?;
    let years = match unit {
        None | Some('y') => x,
        Some('d') => x * DT,
        Some('w') => 5.0 * x * DT,
        Some('m') => 21.0 * x * DT,
        Some(_) => return Err(format!("bad tenor unit in '{s}' (use d, w, m or y)")),
    };
    if years.is_finite() && years > 0.0 {
        Ok(years)
    } else {
        Err(format!("tenor '{s}' must be positive"))
    }
}

pub fn parse_tenors(s: &str) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s.split(',').filter(|t| !t.trim().is_empty()).map(parse_tenor).collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err("empty tenor list".into());
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tenors() {
        assert!((parse_tenor("1m").unwrap() - 21.0 / 252.0).abs() < 1e-15);
        assert!((parse_tenor("10d").unwrap() - 10.0 / 252.0).abs() < 1e-15);
        assert!((parse_tenor("2W").unwrap() - 10.0 / 252.0).abs() < 1e-15);
        assert_eq!(parse_tenor("0.5").unwrap(), 0.5);
        assert_eq!(parse_tenor("1y").unwrap(), 1.0);
        assert!(parse_tenor("3q").is_err());
        assert!(parse_tenor("-1m").is_err());
        assert!(parse_tenor("m").is_err());
        assert_eq!(parse_tenors("1m,3m,6m").unwrap().len(), 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 3, "sede": 4}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"calibration": {"k_grids": [[1.0]], "tolerance": 1}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "factors": 1}"#).unwrap();
        assert_eq!(c.seed(None), 3);
        assert_eq!(c.seed(Some(9)), 9);
        assert_eq!(c.calibration(None, 3).unwrap().n_factors(), 1);
    }

    #[test]
    fn shipped_example_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.example.json");
        let c = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(c.seed(None), DEFAULT_SEED);
        assert_eq!(c.calibration(None, 1).unwrap().k_grids, CalibrationConfig::default().k_grids);
        assert_eq!(c.synthetic.unwrap().params, vardyn::model::ModelParams::paper());
    }

    #[test]
    fn validation_before_compute() {
        let c: RunConfig = serde_json::from_str(r#"{"lambda_scale": -1}"#).unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"factors": 4}"#).unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"factors": 1, "calibration": {"k_grids": [[1.0], [2.0]]}}"#).unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"simulation": {"paths": 0, "steps": 5, "seed": 1}}"#).unwrap();
        assert!(c.validate().is_err());
        assert!(RunConfig::default().calibration(Some(2), 1).is_ok());
        assert!(RunConfig::default().calibration(Some(5), 1).is_err());
    }
}
