//! Whole-network checkpoints as a single portable text file: a header with
//! the dimensions, then each weight matrix row-major in decimal. Rust's
//! shortest round-trip float formatting guarantees save/load is lossless.

use std::fmt::Write as _;
use std::path::Path;

use dtp_core::{ActivationKind, Matrix, Network};

use crate::error::{HarnessError, Result};

const MAGIC: &str = "dtp-net 1";

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "{MAGIC}");
    let _ = writeln!(
        text,
        "width {} layers {} bias {}",
        net.width(),
        net.layer_count(),
        u8::from(net.has_bias())
    );
    match net.activation() {
        ActivationKind::Identity => {
            let _ = writeln!(text, "activation identity");
        }
        ActivationKind::LeakyRelu { slope } => {
            let _ = writeln!(text, "activation leaky_relu {slope}");
        }
    }
    for l in 1..=net.layer_count() {
        write_matrix(&mut text, "encoder", l, net.encoder(l));
        write_matrix(&mut text, "decoder", l, net.decoder(l));
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn write_matrix(text: &mut String, kind: &str, l: usize, m: &Matrix) {
    let _ = writeln!(text, "{kind} {l} {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        let _ = writeln!(text, "{}", row.join(" "));
    }
}

pub fn load_network(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| HarnessError::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        message,
    };
    let mut next_line = |expect: &str| {
        lines
            .next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of file, expected {expect}")))
    };

    let (idx, magic) = next_line("header")?;
    if magic.trim() != MAGIC {
        return Err(parse_err(idx, format!("bad header {magic:?}")));
    }
    let (idx, dims) = next_line("dimensions")?;
    let fields: Vec<&str> = dims.split_whitespace().collect();
    if fields.len() != 6 || fields[0] != "width" || fields[2] != "layers" || fields[4] != "bias" {
        return Err(parse_err(idx, format!("bad dimension line {dims:?}")));
    }
    let width: usize = fields[1]
        .parse()
        .map_err(|e| parse_err(idx, format!("bad width: {e}")))?;
    let layers: usize = fields[3]
        .parse()
        .map_err(|e| parse_err(idx, format!("bad layer count: {e}")))?;
    let bias: u8 = fields[5]
        .parse()
        .map_err(|e| parse_err(idx, format!("bad bias flag: {e}")))?;

    let (idx, act_line) = next_line("activation")?;
    let fields: Vec<&str> = act_line.split_whitespace().collect();
    let activation = match fields.as_slice() {
        ["activation", "identity"] => ActivationKind::Identity,
        ["activation", "leaky_relu", slope] => {
            let slope: f64 = slope
                .parse()
                .map_err(|e| parse_err(idx, format!("bad slope: {e}")))?;
            ActivationKind::LeakyRelu { slope }
        }
        _ => return Err(parse_err(idx, format!("bad activation line {act_line:?}"))),
    };

    let expected_cols = width + usize::from(bias != 0);
    let mut encoders = Vec::with_capacity(layers);
    let mut decoders = Vec::with_capacity(layers);
    for l in 1..=layers {
        for (kind, store) in [("encoder", &mut encoders), ("decoder", &mut decoders)] {
            let (idx, head) = next_line(kind)?;
            let fields: Vec<&str> = head.split_whitespace().collect();
            if fields.len() != 4 || fields[0] != kind {
                return Err(parse_err(
                    idx,
                    format!("expected {kind} header, got {head:?}"),
                ));
            }
            let got_l: usize = fields[1]
                .parse()
                .map_err(|e| parse_err(idx, format!("bad layer index: {e}")))?;
            let rows: usize = fields[2]
                .parse()
                .map_err(|e| parse_err(idx, format!("bad row count: {e}")))?;
            let cols: usize = fields[3]
                .parse()
                .map_err(|e| parse_err(idx, format!("bad column count: {e}")))?;
            if got_l != l || rows != width || cols != expected_cols {
                return Err(parse_err(
                    idx,
                    format!(
                        "{kind} {got_l} is {rows}x{cols}, expected {l} as {width}x{expected_cols}"
                    ),
                ));
            }
            let mut m = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let (idx, row) = next_line("matrix row")?;
                let entries: Vec<&str> = row.split_whitespace().collect();
                if entries.len() != cols {
                    return Err(parse_err(
                        idx,
                        format!("row has {} entries, expected {cols}", entries.len()),
                    ));
                }
                for (j, entry) in entries.iter().enumerate() {
                    m[(i, j)] = entry
                        .parse()
                        .map_err(|e| parse_err(idx, format!("bad entry {entry:?}: {e}")))?;
                }
            }
            store.push(m);
        }
    }
    Network::new(encoders, decoders, activation).map_err(HarnessError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dtp_core::{InitScheme, Network};

    #[test]
    fn save_load_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        for bias in [false, true] {
            let scheme = InitScheme {
                bias,
                ..InitScheme::default()
            };
            let net = Network::init(4, 3, scheme, ActivationKind::leaky_relu(0.1), 21);
            save_network(&net, &path).unwrap();
            let back = load_network(&path).unwrap();
            assert_eq!(back.has_bias(), bias);
            for l in 1..=3 {
                assert_eq!(net.encoder(l), back.encoder(l), "encoder {l}");
                assert_eq!(net.decoder(l), back.decoder(l), "decoder {l}");
            }
        }
    }

    #[test]
    fn truncated_files_report_a_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        let net = Network::init(2, 1, InitScheme::default(), ActivationKind::Identity, 5);
        save_network(&net, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, cut).unwrap();
        let err = load_network(&path).unwrap_err();
        assert!(matches!(err, HarnessError::Parse { .. }), "{err}");
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        std::fs::write(&path, "not-a-net\n").unwrap();
        let err = load_network(&path).unwrap_err();
        assert!(err.to_string().contains("bad header"), "{err}");
    }
}
