use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::graph::{ConnectionSpec, ConnectionType, LayerGraph};
use crate::ncs::Evaluator;

/// Structural stand-in for validation accuracy: rewards hitting a fixed set
/// of target connections and penalises every other inserted connection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    pub target_edges: Vec<ConnectionSpec>,
    pub base: f64,
    pub bonus: f64,
    pub penalty: f64,
    /// When false, a target matches regardless of connection type.
    #[serde(default = "yes")]
    pub type_sensitive: bool,
}

fn yes() -> bool {
    true
}

impl Default for SurrogateSpec {
    /// Targets on the six-node dense chain (input 1, output 6).
    fn default() -> Self {
        SurrogateSpec {
            target_edges: vec![
                ConnectionSpec { src: 1, dst: 3, ctype: ConnectionType::Concatenate },
                ConnectionSpec { src: 3, dst: 5, ctype: ConnectionType::Residual },
            ],
            base: 0.5,
            bonus: 0.15,
            penalty: 0.1,
            type_sensitive: true,
        }
    }
}

impl SurrogateSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.base) || !ok(self.bonus) || !ok(self.penalty) {
            return Err(EvalError::InvalidSurrogate("base, bonus and penalty must be finite and non-negative"));
        }
        Ok(())
    }

    fn matches(&self, c: &ConnectionSpec) -> bool {
        self.target_edges.iter().any(|t| t.src == c.src && t.dst == c.dst && (!self.type_sensitive || t.ctype == c.ctype))
    }
}

/// `clamp(base + bonus * hits - penalty * extras, 0, 1)` over the graph's
/// inserted connections.
pub fn surrogate_reward(graph: &LayerGraph, spec: &SurrogateSpec) -> f64 {
    let conns = graph.connections();
    let hits = conns.iter().filter(|c| spec.matches(c)).count();
    let extras = conns.len() - hits;
    (spec.base + spec.bonus * hits as f64 - spec.penalty * extras as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
pub struct SurrogateEvaluator {
    pub spec: SurrogateSpec,
}

impl Evaluator for SurrogateEvaluator {
    fn evaluate(&mut self, graph: &LayerGraph, _iteration: usize) -> Result<f64, String> {
        Ok(surrogate_reward(graph, &self.spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::insert_connection;
    use crate::nn::templates::dense_chain;

    #[test]
    fn reward_arithmetic() {
        let g = dense_chain(4, 4, 4).unwrap();
        let spec = SurrogateSpec::default();
        assert_eq!(surrogate_reward(&g, &spec), 0.5);
        let g1 = insert_connection(&g, spec.target_edges[0]).unwrap();
        let g2 = insert_connection(&g1, spec.target_edges[1]).unwrap();
        assert!((surrogate_reward(&g2, &spec) - 0.8).abs() < 1e-12);
        let g3 = insert_connection(&g2, ConnectionSpec { src: 2, dst: 4, ctype: ConnectionType::Residual }).unwrap();
        assert!((surrogate_reward(&g3, &spec) - 0.7).abs() < 1e-12);

        let three = SurrogateSpec {
            target_edges: vec![spec.target_edges[0], spec.target_edges[1], ConnectionSpec { src: 2, dst: 4, ctype: ConnectionType::Residual }],
            ..SurrogateSpec::default()
        };
        assert!((surrogate_reward(&g3, &three) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn reward_is_clamped_and_type_aware() {
        let g = dense_chain(4, 4, 4).unwrap();
        let wrong = insert_connection(&g, ConnectionSpec { src: 1, dst: 3, ctype: ConnectionType::Residual }).unwrap();
        let spec = SurrogateSpec { base: 0.05, ..SurrogateSpec::default() };
        assert_eq!(surrogate_reward(&wrong, &spec), 0.0);
        let loose = SurrogateSpec { type_sensitive: false, ..SurrogateSpec::default() };
        assert!((surrogate_reward(&wrong, &loose) - 0.65).abs() < 1e-12);
        assert!(SurrogateSpec { bonus: -1.0, ..SurrogateSpec::default() }.validate().is_err());
    }
}
