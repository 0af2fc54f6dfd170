//! Deterministic cost functions of a template's bindings, for running the
//! pipeline without a database.

use std::f64::consts::PI;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::oracle::{lint_sql, CostOracle, OracleError};
use crate::model::{CostMetric, CostValue, SqlQuery, SqlTemplate};

/// Cost as a function of `x`, the mean of the bindings' positions within
/// their domains (each in `[0, 1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    Constant { value: f64 },
    /// `lo + (hi - lo) * x`.
    Linear { lo: f64, hi: f64 },
    /// Monotone terraces: each of `steps` segments spends 80% of its width
    /// rising through 20% of its cost span, then climbs steeply.
    Step { lo: f64, hi: f64, steps: u32 },
    /// `lo + (hi - lo) * (1 - cos(2 pi modes x)) / 2`.
    Multimodal { lo: f64, hi: f64, modes: f64 },
}

impl Surface {
    pub fn cost(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match *self {
            Surface::Constant { value } => value,
            Surface::Linear { lo, hi } => lo + (hi - lo) * x,
            Surface::Step { lo, hi, steps } => {
                let steps = steps.max(1) as f64;
                let t = x * steps;
                let k = t.floor().min(steps - 1.0);
                let f = t - k;
                let g = if f < 0.8 { f / 0.8 * 0.2 } else { 0.2 + (f - 0.8) / 0.2 * 0.8 };
                lo + (hi - lo) * (k + g) / steps
            }
            Surface::Multimodal { lo, hi, modes } => lo + (hi - lo) * (1.0 - (2.0 * PI * modes * x).cos()) / 2.0,
        }
    }

    /// Parses `name(args)`, e.g. `linear(0, 10000)` or `constant(42)`.
    pub fn parse(text: &str) -> Option<Surface> {
        let text = text.trim();
        let open = text.find('(')?;
        let name = text[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = text[open + 1..]
            .strip_suffix(')')?
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .ok()?;
        match (name.as_str(), args.as_slice()) {
            ("constant", [v]) => Some(Surface::Constant { value: *v }),
            ("linear", [lo, hi]) => Some(Surface::Linear { lo: *lo, hi: *hi }),
            ("step", [lo, hi, s]) if *s >= 1.0 => Some(Surface::Step { lo: *lo, hi: *hi, steps: *s as u32 }),
            ("multimodal", [lo, hi, m]) => Some(Surface::Multimodal { lo: *lo, hi: *hi, modes: *m }),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Surface::Constant { value } => format!("constant({value})"),
            Surface::Linear { lo, hi } => format!("linear({lo}, {hi})"),
            Surface::Step { lo, hi, steps } => format!("step({lo}, {hi}, {steps})"),
            Surface::Multimodal { lo, hi, modes } => format!("multimodal({lo}, {hi}, {modes})"),
        }
    }

    /// The surface named by a `-- surface: ...` comment in `sql`, if any.
    pub fn from_hint(sql: &str) -> Option<Surface> {
        static HINT: OnceLock<Regex> = OnceLock::new();
        let re = HINT.get_or_init(|| Regex::new(r"(?m)^\s*--\s*surface:\s*(.+?)\s*$").expect("valid regex"));
        re.captures(sql).and_then(|c| Surface::parse(&c[1]))
    }

    /// Comment line that selects this surface.
    pub fn hint_line(&self) -> String {
        format!("-- surface: {}", self.render())
    }
}

/// Assigns a surface to templates by id or spec id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRule {
    pub template: String,
    pub surface: Surface,
}

pub struct SyntheticOracle {
    metric: CostMetric,
    default: Surface,
    rules: Vec<SurfaceRule>,
    log: Vec<String>,
    evaluations: u64,
}

impl SyntheticOracle {
    pub fn new(default: Surface) -> Self {
        Self { metric: CostMetric::PlanCost, default, rules: vec![], log: vec![], evaluations: 0 }
    }

    pub fn with_rules(mut self, rules: Vec<SurfaceRule>) -> Self {
        self.rules = rules;
        self
    }

    pub fn with_metric(mut self, metric: CostMetric) -> Self {
        self.metric = metric;
        self
    }

    /// Hint comment first, then a rule matching the template, then the
    /// default.
    pub fn surface_for(&self, template: &SqlTemplate) -> Surface {
        if let Some(s) = Surface::from_hint(&template.sql_text) {
            return s;
        }
        self.rules
            .iter()
            .find(|r| r.template == template.id || template.spec_id.as_deref() == Some(r.template.as_str()))
            .map(|r| r.surface.clone())
            .unwrap_or_else(|| self.default.clone())
    }

    /// Mean position of the bindings within their domains.
    pub fn position(template: &SqlTemplate, query: &SqlQuery) -> Result<f64, OracleError> {
        if template.placeholders.is_empty() {
            return Ok(0.5);
        }
        let mut sum = 0.0;
        for p in &template.placeholders {
            let value = query
                .bindings
                .get(&p.name)
                .ok_or_else(|| OracleError::QueryFailed(format!("no binding for {}", p.name)))?;
            sum += p
                .domain
                .to_unit(value)
                .ok_or_else(|| OracleError::QueryFailed(format!("{} is outside the domain of {}", value, p.name)))?;
        }
        Ok(sum / template.placeholders.len() as f64)
    }
}

impl CostOracle for SyntheticOracle {
    fn metric(&self) -> CostMetric {
        self.metric
    }

    fn validate(&mut self, _template: &SqlTemplate, query: &SqlQuery) -> Result<Vec<String>, OracleError> {
        self.log.push(query.sql_text.clone());
        Ok(lint_sql(&query.sql_text))
    }

    fn evaluate(&mut self, template: &SqlTemplate, query: &SqlQuery) -> Result<CostValue, OracleError> {
        self.log.push(query.sql_text.clone());
        let errors = lint_sql(&query.sql_text);
        if !errors.is_empty() {
            return Err(OracleError::QueryFailed(errors.join("; ")));
        }
        let x = Self::position(template, query)?;
        self.evaluations += 1;
        Ok(CostValue { metric: self.metric, value: self.surface_for(template).cost(x) })
    }

    fn call_log(&self) -> &[String] {
        &self.log
    }

    fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surfaces() {
        let lin = Surface::Linear { lo: 0.0, hi: 10_000.0 };
        assert_eq!(lin.cost(0.25), 2500.0);
        let step = Surface::Step { lo: 0.0, hi: 100.0, steps: 4 };
        // Monotone and continuous on a fine grid.
        let mut prev = step.cost(0.0);
        for i in 1..=10_000 {
            let c = step.cost(i as f64 / 10_000.0);
            assert!(c >= prev && c - prev < 0.1, "{prev} -> {c}");
            prev = c;
        }
        assert!((step.cost(1.0) - 100.0).abs() < 1e-9);
        let mm = Surface::Multimodal { lo: 0.0, hi: 10.0, modes: 1.5 };
        assert!(mm.cost(0.0).abs() < 1e-12);
        assert!((mm.cost(1.0 / 3.0) - 10.0).abs() < 1e-9);
        assert!(mm.cost(2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn hints_round_trip() {
        for s in [
            Surface::Constant { value: 42.0 },
            Surface::Linear { lo: 6000.0, hi: 8000.0 },
            Surface::Step { lo: 0.0, hi: 1e4, steps: 5 },
            Surface::Multimodal { lo: 0.0, hi: 1e4, modes: 1.5 },
        ] {
            let sql = format!("{}\nSELECT 1 FROM t", s.hint_line());
            assert_eq!(Surface::from_hint(&sql), Some(s));
        }
        assert_eq!(Surface::from_hint("SELECT 1"), None);
        assert_eq!(Surface::parse("linear(1)"), None);
    }
}
