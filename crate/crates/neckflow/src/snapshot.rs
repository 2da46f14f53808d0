//! Snapshot files: a text header of `key=value` lines ending in `end`, then the field
//! values as little-endian `f64` in row-major order `(y₁, …, y_d, θ)`.
//!
//! Header numbers use Rust's shortest round-trip formatting, so files are lossless.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use neckflow_core::grid::{Axis, FieldRole, GraphField, Grid};
use neckflow_core::profile::ProfileParams;
use neckflow_core::rescaled::{FlowState, Mode};

pub const MAGIC: &str = "neckflow-snapshot";
pub const VERSION: u32 = 1;

pub fn encode(state: &FlowState) -> Vec<u8> {
    let g = state.grid();
    let mut h = format!("{MAGIC} {VERSION}\n");
    h += &format!("dim={}\n", g.dim());
    let axes: Vec<String> = g.axes().iter().map(|a| format!("{}:{}", a.n, a.extent)).collect();
    h += &format!("axes={}\n", axes.join(","));
    h += &format!("n_theta={}\n", g.n_theta());
    h += &format!("role={}\n", state.field.role().tag());
    match state.mode {
        Mode::Rescaled { tau, xi0 } => h += &format!("mode=rescaled\ntau={tau}\nxi0={xi0}\n"),
        Mode::Unrescaled { t, t_blowup } => {
            h += &format!("mode=unrescaled\nt={t}\n");
            if let Some(tb) = t_blowup {
                h += &format!("t_blowup={tb}\n");
            }
        }
    }
    let o = &state.outer;
    let b: Vec<String> = o.b.iter().flatten().map(|x| x.to_string()).collect();
    h += &format!("outer_a={}\nouter_b={}\n", o.a, b.join(","));
    h += &format!("values={}\nend\n", state.field.values().len());
    let mut out = h.into_bytes();
    for v in state.field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write(path: &Path, state: &FlowState) -> Result<()> {
    fs::write(path, encode(state)).with_context(|| format!("writing snapshot {}", path.display()))
}

pub fn read(path: &Path) -> Result<FlowState> {
    let bytes = fs::read(path).with_context(|| format!("reading snapshot {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding snapshot {}", path.display()))
}

pub fn decode(bytes: &[u8]) -> Result<FlowState> {
    let marker = b"\nend\n";
    let split = bytes.windows(marker.len()).position(|w| w == marker).context("header has no end line")?;
    let header = std::str::from_utf8(&bytes[..split]).context("header is not UTF-8")?;
    let payload = &bytes[split + marker.len()..];
    let mut lines = header.lines();
    let first = lines.next().unwrap_or_default();
    if first != format!("{MAGIC} {VERSION}") {
        bail!("unsupported snapshot header {first:?}");
    }
    let kv: Vec<(&str, &str)> = lines.filter_map(|l| l.split_once('=')).collect();
    let get = |k: &str| kv.iter().find(|(key, _)| *key == k).map(|(_, v)| *v).with_context(|| format!("missing {k}"));
    let num = |k: &str| -> Result<f64> { get(k)?.parse::<f64>().with_context(|| format!("bad {k}")) };

    let dim: usize = get("dim")?.parse()?;
    let axes = get("axes")?
        .split(',')
        .map(|s| {
            let (n, e) = s.split_once(':').context("axis needs n:extent")?;
            Ok(Axis { n: n.parse()?, extent: e.parse()? })
        })
        .collect::<Result<Vec<_>>>()?;
    if axes.len() != dim {
        bail!("{} axes for dim {dim}", axes.len());
    }
    let n_theta: usize = get("n_theta")?.parse()?;
    let grid = Grid::with_axes(&axes, n_theta)?;
    let count: usize = get("values")?.parse()?;
    if count != grid.len() || payload.len() != 8 * count {
        bail!("payload holds {} bytes, header promises {count} values on a {}-node grid", payload.len(), grid.len());
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let role = FieldRole::from_tag(get("role")?).context("unknown role")?;
    let field = GraphField::new(&grid, values, role)?;

    let b_vals = get("outer_b")?.split(',').map(|s| s.parse::<f64>()).collect::<Result<Vec<_>, _>>()?;
    if b_vals.len() != 9 {
        bail!("outer_b needs 9 entries");
    }
    let mut outer = ProfileParams::cylinder(dim);
    outer.a = num("outer_a")?;
    for (i, v) in b_vals.iter().enumerate() {
        outer.b[i / 3][i % 3] = *v;
    }
    let mut state = match get("mode")? {
        "rescaled" => FlowState::rescaled(field, num("tau")?, num("xi0")?, outer)?,
        "unrescaled" => {
            let tb = get("t_blowup").ok().map(str::parse::<f64>).transpose()?;
            FlowState::unrescaled(field, num("t")?, tb)?
        }
        other => bail!("unknown mode {other:?}"),
    };
    state.outer = outer;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use neckflow_core::run::{neck_initial, neck_outer};

    #[test]
    fn rescaled_round_trip_is_lossless() {
        let g = Grid::new(1, 33, 8.0, 8).unwrap();
        let v = neck_initial(&g, 20.0, &[1.0], 0.05).unwrap();
        let s = FlowState::rescaled(v, 21.0 + 1.0 / 3.0, 20.0, neck_outer(1, 20.0, &[1.0])).unwrap();
        let back = decode(&encode(&s)).unwrap();
        assert_eq!(back.field.values(), s.field.values());
        assert_eq!(back.mode, s.mode);
        assert_eq!(back.outer, s.outer);
        assert_eq!(encode(&back), encode(&s));
    }

    #[test]
    fn unrescaled_round_trip_and_corruption() {
        let g = Grid::with_axes(&[Axis { n: 9, extent: 1.0 }, Axis { n: 11, extent: 2.0 }], 8).unwrap();
        let u = GraphField::from_fn(&g, FieldRole::Unrescaled, |y, t| 1.0 + 0.1 * y[0] * (t).cos() + 0.01 * y[1]).unwrap();
        let s = FlowState::unrescaled(u, 0.25, Some(0.75)).unwrap();
        let bytes = encode(&s);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.field.values(), s.field.values());
        assert_eq!(back.mode, s.mode);
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode(b"other 1\nend\n").is_err());
    }
}
