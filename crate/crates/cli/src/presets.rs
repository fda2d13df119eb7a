//! Named experiment configurations.

use crate::config::{Config, Data, Mode, Pipeline, TopologyName};

/// Preset names with a one-line description each.
pub const PRESETS: [(&str, &str); 11] = [
    ("selfsim-theta1", "self-similar oracle for theta = 1 on [1, 2]"),
    ("selfsim-theta2", "self-similar oracle for theta = 2 on [1, 2]"),
    ("flow-selfsim", "Lagrangian planning between self-similar profiles, theta = 1"),
    ("flow-terminal", "Lagrangian terminal-cost problem with c1 = 1, theta = 1"),
    ("elliptic-power-sweep", "Eulerian epsilon sweep on self-similar data, theta = 1"),
    ("elliptic-log-compact", "Eulerian log-coupling sweep from compactly supported data on a torus"),
    ("elliptic-log-smooth", "Eulerian log-coupling planning between even cosine marginals"),
    ("variational-translation", "convex program without congestion: translated bump"),
    ("variational-selfsim", "convex program on self-similar planning data, 32 x 32"),
    ("diagnose-example", "diagnostics on fields.csv in the current directory"),
    ("acceptance", "the full acceptance suite"),
];

pub fn preset(name: &str) -> Option<Config> {
    let mut c = match name {
        "selfsim-theta1" | "selfsim-theta2" => {
            let mut c = Config::for_pipeline(Pipeline::Selfsim);
            if name.ends_with('2') {
                c.problem.coupling = "power:2".into();
            }
            c
        }
        "flow-selfsim" => Config::for_pipeline(Pipeline::SolveFlow),
        "flow-terminal" => {
            let mut c = Config::for_pipeline(Pipeline::SolveFlow);
            c.problem.mode = Mode::Terminal;
            c
        }
        "elliptic-power-sweep" => {
            let mut c = Config::for_pipeline(Pipeline::SolveElliptic);
            c.solver.sweep = true;
            c
        }
        "elliptic-log-compact" => {
            let mut c = Config::for_pipeline(Pipeline::SolveElliptic);
            c.problem.coupling = "log".into();
            c.problem.data = Data::Compact;
            c.problem.horizon = 2.0;
            c.grid.nx = Some(33);
            c.grid.nt = Some(33);
            c.solver.sweep = true;
            c
        }
        "elliptic-log-smooth" => {
            let mut c = Config::for_pipeline(Pipeline::SolveElliptic);
            c.problem.coupling = "log".into();
            c.problem.data = Data::Cosine;
            c.grid.nx = Some(33);
            c.grid.nt = Some(33);
            c.grid.topology = Some(TopologyName::Torus);
            c
        }
        "variational-translation" => {
            let mut c = Config::for_pipeline(Pipeline::Variational);
            c.problem.data = Data::Bump;
            c.problem.lambda = 0.0;
            c.grid.nx = Some(48);
            c.grid.nt = Some(48);
            c
        }
        "variational-selfsim" => Config::for_pipeline(Pipeline::Variational),
        "diagnose-example" => {
            let mut c = Config::for_pipeline(Pipeline::Diagnose);
            c.problem.input = Some("fields.csv".into());
            c
        }
        "acceptance" => Config::for_pipeline(Pipeline::Acceptance),
        _ => return None,
    };
    c.outputs.dir = Some(name.into());
    Some(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_preset_validates() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap_or_else(|| panic!("{name}"));
            c.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("nope").is_none());
    }
}
