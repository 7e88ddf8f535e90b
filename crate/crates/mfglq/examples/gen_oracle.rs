//! Regenerates the fine-grid reference values frozen in
//! `tests/fixtures/production_oracle.json`: the production preset solved at
//! 100000 backward steps, recorded at t = 0.
//!
//! Run with `--write` to overwrite the fixture in place; without arguments
//! the JSON is printed to stdout.

use mfglq::model::production_preset;
use mfglq::offsets::{solve_finite_n_phi_psi, solve_limit_phi_psi};
use mfglq::riccati::{solve_finite_n, solve_limit};

const ORACLE_STEPS: usize = 100_000;
const AGENTS: usize = 300;

fn main() {
    let cfg = production_preset(AGENTS, ORACLE_STEPS, 1);
    let limit = solve_limit(&cfg).expect("limit solve");
    let limit_off = solve_limit_phi_psi(&cfg, &limit).expect("limit offsets");
    let fin = solve_finite_n(&cfg, AGENTS).expect("finite solve");
    let fin_off = solve_finite_n_phi_psi(&cfg, &fin).expect("finite offsets");

    let s_max = limit.s.iter().map(|m| m.norm()).fold(0.0, f64::max);
    let json = serde_json::json!({
        "description": "production preset solved at 100000 backward steps; values at t = 0",
        "steps": ORACLE_STEPS,
        "agents": AGENTS,
        "limit": {
            "p0": limit.p[0][(0, 0)],
            "k0": limit.k[0][(0, 0)],
            "pi0": limit.pi[0][(0, 0)],
            "m0": limit.m[0][(0, 0)],
            "s_max": s_max,
            "phi0": limit_off.phi[0][0],
            "psi0": limit_off.psi[0][0],
        },
        "finite_300": {
            "p0": fin.p[0][(0, 0)],
            "k0": fin.k[0][(0, 0)],
            "pi0": fin.pi[0][(0, 0)],
            "m0": fin.m[0][(0, 0)],
            "phi0": fin_off.phi[0][0],
            "psi0": fin_off.psi[0][0],
        },
    });
    let text = serde_json::to_string_pretty(&json).expect("serialize");
    if std::env::args().any(|a| a == "--write") {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/production_oracle.json");
        std::fs::write(path, format!("{text}\n")).expect("write fixture");
        eprintln!("wrote {path}");
    } else {
        println!("{text}");
    }
}
