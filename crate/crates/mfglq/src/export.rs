//! Deterministic artifact emission: CSV schedules, self-contained SVG line
//! charts, and a fixed-width binary trajectory dump.
//!
//! All numeric formatting uses the shortest round-trip representation, so a
//! given solution serializes to identical bytes on every run.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::riccati::{MatPath, VecPath};
use crate::sim::{BundleKind, NoiseBundle, TrajectoryBundle};

/// FNV-1a 64-bit content hash used by run manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One grid-node row per line: `t` followed by the row-major entries of each
/// named matrix schedule.
pub fn write_matrix_schedule_csv(
    path: &Path,
    times: &[f64],
    series: &[(&str, &MatPath)],
) -> Result<()> {
    let mut out = String::new();
    out.push('t');
    for (name, sched) in series {
        let (rows, cols) = sched[0].shape();
        for r in 0..rows {
            for c in 0..cols {
                if rows * cols == 1 {
                    out.push_str(&format!(",{name}"));
                } else {
                    out.push_str(&format!(",{name}_{r}{c}"));
                }
            }
        }
    }
    out.push('\n');
    for (j, &t) in times.iter().enumerate() {
        out.push_str(&format!("{t}"));
        for (_, sched) in series {
            let m = &sched[j];
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.push_str(&format!(",{}", m[(r, c)]));
                }
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Gain schedule in the matrix-schedule CSV convention (offset vectors as
/// one-column matrices).
pub fn write_gain_schedule_csv(
    path: &Path,
    times: &[f64],
    gains: &crate::feedback::GainSchedule,
) -> Result<()> {
    let offset_cols: MatPath = gains
        .offset
        .iter()
        .map(|v| nalgebra::DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
        .collect();
    write_matrix_schedule_csv(
        path,
        times,
        &[
            ("self_gain", &gains.self_gain),
            ("mf_gain", &gains.mf_gain),
            ("offset", &offset_cols),
        ],
    )
}

/// Generic numeric table.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One named curve for the SVG chart.
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

/// Self-contained polyline chart in a fixed 800x600 view box; no external
/// tooling, byte-reproducible output.
pub fn write_svg_chart(path: &Path, title: &str, series: &[Series<'_>]) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::config("nothing to plot"));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    let (w, h) = (800.0, 600.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 45.0);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" font-family=\"monospace\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        h - mb
    ));
    // Tick labels.
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{:.3}</text>\n",
            sx(fx),
            h - mb + 18.0,
            fx
        ));
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
            ml - 6.0,
            sy(fy) + 4.0,
            fy
        ));
    }
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        if !s.label.is_empty() {
            let ly = mt + 16.0 * idx as f64;
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                w - mr - 130.0,
                w - mr - 105.0
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
                w - mr - 100.0,
                ly + 4.0,
                s.label
            ));
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Scalar view of a vector path for plotting: the first component when the
/// dimension is one, otherwise the Euclidean norm.
pub fn plot_value(v: &DVector<f64>) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v.norm()
    }
}

/// Scalar view of a matrix for plotting, in the same spirit.
pub fn plot_value_mat(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.len() == 1 {
        m[(0, 0)]
    } else {
        m.norm()
    }
}

/// Series of plot values over the grid.
pub fn vec_series(times: &[f64], path: &VecPath) -> Vec<(f64, f64)> {
    times.iter().zip(path.iter()).map(|(&t, v)| (t, plot_value(v))).collect()
}

// ---------------------------------------------------------------------------
// Binary trajectory dump.
//
// Fixed-width little-endian layout:
//   bytes 0..6   magic "MFGLQ1"
//   u16          format version (1)
//   u8           bundle kind (0 centralized, 1 decentralized)
//   u8           has auxiliary paths (0/1)
//   u32          agents
//   u32          nodes
//   u32          state dimension
//   u32          control dimension
//   u64          master seed
//   u64          scenario
//   f64          dt
//   then f64 data, agent-major then node-major then component-major:
//   states, controls, mean path; when auxiliary paths are present, the
//   mean-field path, auxiliary states, and auxiliary mean follow.
// ---------------------------------------------------------------------------

pub const BUNDLE_MAGIC: &[u8; 6] = b"MFGLQ1";
const BUNDLE_VERSION: u16 = 1;

fn push_paths(buf: &mut Vec<u8>, paths: &[VecPath]) {
    for path in paths {
        for node in path {
            for &v in node.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

pub fn write_bundle_binary(path: &Path, bundle: &TrajectoryBundle) -> Result<()> {
    let agents = bundle.states.len();
    let nodes = bundle.mean_state.len();
    let state_dim = bundle.mean_state[0].len();
    let control_dim = bundle.controls[0][0].len();
    let mut buf = Vec::new();
    buf.extend_from_slice(BUNDLE_MAGIC);
    buf.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    buf.push(match bundle.kind {
        BundleKind::Centralized => 0,
        BundleKind::Decentralized => 1,
    });
    buf.push(bundle.aux.is_some() as u8);
    buf.extend_from_slice(&(agents as u32).to_le_bytes());
    buf.extend_from_slice(&(nodes as u32).to_le_bytes());
    buf.extend_from_slice(&(state_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(control_dim as u32).to_le_bytes());
    buf.extend_from_slice(&bundle.noise.master_seed.to_le_bytes());
    buf.extend_from_slice(&bundle.scenario.to_le_bytes());
    buf.extend_from_slice(&bundle.noise.dt.to_le_bytes());
    push_paths(&mut buf, &bundle.states);
    push_paths(&mut buf, &bundle.controls);
    push_paths(&mut buf, std::slice::from_ref(&bundle.mean_state));
    if let Some(aux) = &bundle.aux {
        push_paths(&mut buf, std::slice::from_ref(&aux.mean_field));
        push_paths(&mut buf, &aux.aux_states);
        push_paths(&mut buf, std::slice::from_ref(&aux.aux_mean));
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::config("binary bundle truncated"));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn paths(&mut self, count: usize, nodes: usize, dim: usize) -> Result<Vec<VecPath>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut path = Vec::with_capacity(nodes);
            for _ in 0..nodes {
                let mut v = DVector::zeros(dim);
                for c in 0..dim {
                    v[c] = self.f64()?;
                }
                path.push(v);
            }
            out.push(path);
        }
        Ok(out)
    }
}

/// Read a bundle written by [`write_bundle_binary`]. The embedded noise is
/// regenerated from the recorded seed and scenario.
pub fn read_bundle_binary(path: &Path) -> Result<TrajectoryBundle> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, at: 0 };
    if r.take(6)? != BUNDLE_MAGIC {
        return Err(Error::config("not a trajectory dump (bad magic)"));
    }
    let version = r.u16()?;
    if version != BUNDLE_VERSION {
        return Err(Error::config(format!("unsupported dump version {version}")));
    }
    let kind = match r.take(1)?[0] {
        0 => BundleKind::Centralized,
        1 => BundleKind::Decentralized,
        other => return Err(Error::config(format!("unknown bundle kind {other}"))),
    };
    let has_aux = r.take(1)?[0] != 0;
    let agents = r.u32()? as usize;
    let nodes = r.u32()? as usize;
    let state_dim = r.u32()? as usize;
    let control_dim = r.u32()? as usize;
    let master_seed = r.u64()?;
    let scenario = r.u64()?;
    let dt = r.f64()?;

    let states = r.paths(agents, nodes, state_dim)?;
    let controls = r.paths(agents, nodes, control_dim)?;
    let mean_state = r.paths(1, nodes, state_dim)?.pop().unwrap();
    let aux = if has_aux {
        let mean_field = r.paths(1, nodes, state_dim)?.pop().unwrap();
        let aux_states = r.paths(agents, nodes, state_dim)?;
        let aux_mean = r.paths(1, nodes, state_dim)?.pop().unwrap();
        Some(crate::sim::DecentralizedPaths { mean_field, aux_states, aux_mean })
    } else {
        None
    };
    let noise = NoiseBundle::generate(master_seed, scenario, agents, nodes.saturating_sub(1), dt);
    Ok(TrajectoryBundle { scenario, kind, states, controls, mean_state, aux, noise })
}

/// Write a value as pretty JSON.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    let s = serde_json::to_string_pretty(value)?;
    f.write_all(s.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::decentralized_gains;
    use crate::model::production_preset;
    use crate::offsets::solve_limit_phi_psi;
    use crate::riccati::solve_limit;
    use crate::sim::simulate_decentralized;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn binary_bundle_round_trips() {
        let cfg = production_preset(4, 50, 9);
        let sols = solve_limit(&cfg).unwrap();
        let off = solve_limit_phi_psi(&cfg, &sols).unwrap();
        let gains = decentralized_gains(&cfg, &sols, &off).unwrap();
        let bundle =
            simulate_decentralized(&cfg, &gains, &NoiseBundle::for_config(&cfg, 3)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.bin");
        write_bundle_binary(&path, &bundle).unwrap();
        let back = read_bundle_binary(&path).unwrap();
        assert_eq!(back.kind, bundle.kind);
        assert_eq!(back.scenario, bundle.scenario);
        for i in 0..4 {
            for j in 0..cfg.grid.nodes() {
                assert_eq!(back.states[i][j][0].to_bits(), bundle.states[i][j][0].to_bits());
                assert_eq!(back.controls[i][j][0].to_bits(), bundle.controls[i][j][0].to_bits());
            }
        }
        assert_eq!(back.noise, bundle.noise);
        let aux_a = back.aux.as_ref().unwrap();
        let aux_b = bundle.aux.as_ref().unwrap();
        for j in 0..cfg.grid.nodes() {
            assert_eq!(aux_a.mean_field[j][0].to_bits(), aux_b.mean_field[j][0].to_bits());
        }
    }

    #[test]
    fn svg_and_csv_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let series = vec![Series {
            label: "x",
            points: vec![(0.0, 1.0), (0.5, 0.25), (1.0, -0.125)],
        }];
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        write_svg_chart(&a, "demo", &series).unwrap();
        write_svg_chart(&b, "demo", &series).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

        let rows = vec![vec![0.0, 1.0], vec![0.001, 0.5]];
        let c = dir.path().join("t.csv");
        write_table_csv(&c, &["t", "v"], &rows).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert!(text.starts_with("t,v\n0,1\n0.001,0.5\n"));
    }
}
