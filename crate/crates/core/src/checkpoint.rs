//! Plain-text network checkpoints with an optional binary sidecar.
//!
//! ```text
//! sns-checkpoint
//! format_version 1
//! kind sns-model
//! input_dim 3
//! output_dim 3
//! width 64
//! n_blocks 4
//! activation softplus
//! init_seed 7
//! rng chacha8
//! meta area_scale 1.0000000000000000e0
//! tensor lift.weight 64 3
//! <one matrix row per line>
//! ...
//! end
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly. The sidecar holds the same values as little-endian `f64` in
//! declaration order (column-major within each tensor).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{contract, Result, SnsError};
use crate::mlp::{Activation, Mlp, MlpParams, MlpSpec, RNG_NAME};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "sns-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub mlp: Mlp,
    /// Free-form key/value pairs, in order.
    pub meta: Vec<(String, String)>,
}

fn perr(line: usize, msg: impl Into<String>) -> SnsError {
    SnsError::Parse { line, msg: msg.into() }
}

impl Checkpoint {
    pub fn new(kind: &str, mlp: Mlp) -> Self {
        Checkpoint { kind: kind.into(), mlp, meta: Vec::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        let v = self.meta(key).ok_or_else(|| contract(format!("checkpoint lacks `{key}`")))?;
        v.parse().map_err(|_| contract(format!("checkpoint field `{key}` is not a number: `{v}`")))
    }

    pub fn to_text(&self) -> String {
        let spec = &self.mlp.spec;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "format_version {FORMAT_VERSION}");
        let _ = writeln!(s, "kind {}", self.kind);
        let _ = writeln!(s, "input_dim {}", spec.input_dim);
        let _ = writeln!(s, "output_dim {}", spec.output_dim);
        let _ = writeln!(s, "width {}", spec.width);
        let _ = writeln!(s, "n_blocks {}", spec.n_blocks);
        let _ = writeln!(s, "activation {}", spec.activation.name());
        let _ = writeln!(s, "init_seed {}", self.mlp.seed);
        let _ = writeln!(s, "rng {RNG_NAME}");
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {}", v.replace('\n', " "));
        }
        for (name, rows, cols, data) in tensor_shapes(&self.mlp.params) {
            let _ = writeln!(s, "tensor {name} {rows} {cols}");
            for r in 0..rows {
                let row: Vec<String> = (0..cols).map(|c| format!("{:.16e}", data[c * rows + r])).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| lines.next().ok_or_else(|| perr(0, format!("file ends before {what}")));
        let (ln, magic) = next("magic")?;
        if magic != MAGIC {
            return Err(perr(ln, "not an sns checkpoint"));
        }
        let mut header = std::collections::HashMap::new();
        let mut meta = Vec::new();
        let mut pending: Option<(usize, String, usize, usize)> = None;
        loop {
            let (ln, line) = next("tensor data")?;
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.push((k.to_string(), v.to_string()));
                }
                "tensor" => {
                    let t: Vec<&str> = rest.split_whitespace().collect();
                    let (Some(name), Some(r), Some(c)) = (t.first(), t.get(1).and_then(|x| x.parse().ok()), t.get(2).and_then(|x| x.parse().ok())) else {
                        return Err(perr(ln, "malformed tensor line"));
                    };
                    pending = Some((ln, name.to_string(), r, c));
                    break;
                }
                "end" => break,
                _ => {
                    header.insert(key.to_string(), (ln, rest.to_string()));
                }
            }
        }
        let field = |k: &str| -> Result<(usize, String)> { header.get(k).cloned().ok_or_else(|| perr(0, format!("missing header field `{k}`"))) };
        let num = |k: &str| -> Result<usize> {
            let (ln, v) = field(k)?;
            v.parse().map_err(|_| perr(ln, format!("`{k}` is not a count")))
        };
        let version = num("format_version")?;
        if version as u32 != FORMAT_VERSION {
            return Err(perr(field("format_version")?.0, format!("unsupported format version {version}")));
        }
        let (aln, act) = field("activation")?;
        if act != Activation::Softplus.name() {
            return Err(perr(aln, format!("unsupported activation `{act}`")));
        }
        let spec = MlpSpec::new(num("input_dim")?, num("output_dim")?, num("width")?, num("n_blocks")?);
        spec.validate()?;
        let (sln, seed) = field("init_seed")?;
        let seed: u64 = seed.parse().map_err(|_| perr(sln, "bad init_seed"))?;
        let kind = field("kind")?.1;

        let mut params = MlpParams::zeros(&spec);
        let expected: Vec<(String, usize, usize)> =
            tensor_shapes(&params).into_iter().map(|(n, r, c, _)| (n, r, c)).collect();
        let mut bufs: Vec<Vec<f64>> = Vec::new();
        for (name, rows, cols) in &expected {
            let (ln, got, r, c) = pending.take().ok_or_else(|| perr(0, format!("missing tensor `{name}`")))?;
            if &got != name || r != *rows || c != *cols {
                return Err(perr(ln, format!("expected tensor {name} {rows}x{cols}, found {got} {r}x{c}")));
            }
            let mut data = vec![0.0; rows * cols];
            for row in 0..*rows {
                let (ln, line) = next("tensor row")?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| perr(ln, format!("bad number `{t}`"))))
                    .collect::<Result<_>>()?;
                if vals.len() != *cols {
                    return Err(perr(ln, format!("row has {} values, expected {cols}", vals.len())));
                }
                for (col, v) in vals.into_iter().enumerate() {
                    data[col * rows + row] = v;
                }
            }
            bufs.push(data);
            let (ln, line) = next("next tensor or end")?;
            if line == "end" {
                continue;
            }
            let t: Vec<&str> = line.split_whitespace().collect();
            match (t.first(), t.get(1), t.get(2).and_then(|x| x.parse().ok()), t.get(3).and_then(|x| x.parse().ok())) {
                (Some(&"tensor"), Some(n), Some(r), Some(c)) => pending = Some((ln, n.to_string(), r, c)),
                _ => return Err(perr(ln, "expected `tensor` or `end`")),
            }
        }
        if let Some((ln, name, _, _)) = pending {
            return Err(perr(ln, format!("unexpected tensor `{name}`")));
        }
        for (dst, src) in params.tensors_mut().into_iter().zip(bufs) {
            dst.copy_from_slice(&src);
        }
        let mlp = Mlp::from_params(spec, params, seed)?;
        Ok(Checkpoint { kind, mlp, meta })
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.mlp.params.num_params() * 8);
        for (_, t) in self.mlp.params.tensors() {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Replaces the parameters with the contents of a binary sidecar.
    pub fn load_binary(&mut self, bytes: &[u8]) -> Result<()> {
        let n = self.mlp.params.num_params();
        if bytes.len() != 8 * n {
            return Err(perr(0, format!("sidecar holds {} bytes, expected {}", bytes.len(), 8 * n)));
        }
        let mut vals = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for t in self.mlp.params.tensors_mut() {
            for x in t.iter_mut() {
                *x = vals.next().unwrap();
            }
        }
        if !self.mlp.params.all_finite() {
            return Err(perr(0, "sidecar contains non-finite values"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, sidecar: bool) -> Result<()> {
        fs::write(path, self.to_text())?;
        if sidecar {
            fs::write(sidecar_path(path), self.to_binary())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

fn tensor_shapes(p: &MlpParams) -> Vec<(String, usize, usize, &[f64])> {
    let mut dims = vec![(p.lift.weight.shape()), (p.lift.bias.len(), 1)];
    for b in &p.blocks {
        dims.push(b.weight.shape());
        dims.push((b.bias.len(), 1));
    }
    dims.push(p.proj.weight.shape());
    dims.push((p.proj.bias.len(), 1));
    p.tensors().into_iter().zip(dims).map(|((n, t), (r, c))| (n, r, c, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mlp = Mlp::new(MlpSpec::new(3, 3, 5, 2), 11).unwrap();
        Checkpoint::new("sns-model", mlp).with_meta("area_scale", 0.1 + 0.2).with_meta("source", "mesh a b.obj")
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta_f64("area_scale").unwrap(), 0.1 + 0.2);
        assert_eq!(back.meta("source"), Some("mesh a b.obj"));
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let c = sample();
        let mut other = Checkpoint::new("sns-model", Mlp::new(c.mlp.spec, 99).unwrap());
        other.load_binary(&c.to_binary()).unwrap();
        assert_eq!(other.mlp.params, c.mlp.params);
    }

    #[test]
    fn corrupt_row_reports_line() {
        let text = sample().to_text();
        let mut lines: Vec<&str> = text.lines().collect();
        let idx = lines.iter().position(|l| l.starts_with("tensor blocks.0.weight")).unwrap() + 2;
        lines[idx] = "1.0 nope";
        match Checkpoint::parse(&lines.join("\n")) {
            Err(SnsError::Parse { line, .. }) => assert_eq!(line, idx + 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = sample().to_text();
        assert!(Checkpoint::parse(&text[..text.len() / 2]).is_err());
    }
}
