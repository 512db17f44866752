//! Model container: named parameter matrices with shape headers.
//!
//! ```text
//! HETFED-MODEL v1
//! meta input_dim=<D> classes=<C> activation=<tanh|relu|linear>
//! tensor layer0.weight <rows> <cols>
//! <rows lines of cols values>
//! tensor layer0.bias 1 <cols>
//! ...
//! tensor classifier.weight <d> <C>
//! tensor classifier.bias 1 <C>
//! end
//! ```
//!
//! Values use shortest round-trip `Display`; loading is bit-exact.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use hetfed_core::models::{Activation, ClientModel, Layer};
use hetfed_core::{Matrix, Result, SimError};

use super::write_atomic;

const MAGIC: &str = "HETFED-MODEL v1";

pub fn format_model(model: &ClientModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let activation = model
        .layers()
        .first()
        .map_or(Activation::Tanh, |l| l.activation);
    let _ = writeln!(
        out,
        "meta input_dim={} classes={} activation={}",
        model.input_dim(),
        model.class_count(),
        activation.name()
    );
    for (name, tensor) in model.state_dict() {
        let _ = writeln!(out, "tensor {name} {} {}", tensor.rows(), tensor.cols());
        for r in 0..tensor.rows() {
            for c in 0..tensor.cols() {
                if c > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", tensor[(r, c)]);
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_model(model: &ClientModel, path: &Path) -> io::Result<()> {
    write_atomic(path, &format_model(model))
}

pub fn parse_model(text: &str) -> Result<ClientModel> {
    let mut lines = text.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String)> {
        lines
            .next()
            .map(|(n, l)| (n + 1, l.to_string()))
            .ok_or_else(|| SimError::Parameter(format!("model file truncated, expected {expect}")))
    };

    let (_, magic) = next("magic")?;
    if magic != MAGIC {
        return Err(SimError::Parameter(format!(
            "bad model magic '{magic}', expected '{MAGIC}'"
        )));
    }
    let (_, meta) = next("meta")?;
    let mut input_dim = None;
    let mut activation = Activation::Tanh;
    for part in meta.split_whitespace().skip(1) {
        if let Some(v) = part.strip_prefix("input_dim=") {
            input_dim = Some(v.parse::<usize>().map_err(|e| {
                SimError::Parameter(format!("bad input_dim: {e}"))
            })?);
        } else if let Some(v) = part.strip_prefix("activation=") {
            activation = Activation::parse(v)?;
        }
    }
    let input_dim =
        input_dim.ok_or_else(|| SimError::Parameter("meta line lacks input_dim".into()))?;

    let mut tensors: Vec<(String, Matrix)> = Vec::new();
    loop {
        let (line_no, line) = next("tensor or end")?;
        if line == "end" {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(SimError::Parameter(format!(
                "model file line {line_no}: expected 'tensor <name> <rows> <cols>'"
            )));
        }
        let name = parts[1].to_string();
        let rows: usize = parts[2]
            .parse()
            .map_err(|e| SimError::Parameter(format!("bad rows: {e}")))?;
        let cols: usize = parts[3]
            .parse()
            .map_err(|e| SimError::Parameter(format!("bad cols: {e}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, row) = next("tensor row")?;
            for token in row.split_whitespace() {
                data.push(token.parse::<f64>().map_err(|e| {
                    SimError::Parameter(format!("model file line {n}: bad value '{token}': {e}"))
                })?);
            }
        }
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }

    // layerN.weight / layerN.bias pairs in order, then the classifier
    let mut layers = Vec::new();
    let mut classifier_weight = None;
    let mut classifier_bias = None;
    let mut idx = 0usize;
    for (name, tensor) in tensors {
        if name == format!("layer{idx}.weight") {
            layers.push(Layer { weight: tensor, bias: Matrix::zeros(0, 0), activation });
        } else if name == format!("layer{idx}.bias") {
            let layer: &mut Layer = layers
                .last_mut()
                .ok_or_else(|| SimError::Parameter(format!("bias '{name}' before its weight")))?;
            layer.bias = tensor;
            idx += 1;
        } else if name == "classifier.weight" {
            classifier_weight = Some(tensor);
        } else if name == "classifier.bias" {
            classifier_bias = Some(tensor);
        } else {
            return Err(SimError::Parameter(format!("unexpected tensor '{name}'")));
        }
    }
    let classifier_weight = classifier_weight
        .ok_or_else(|| SimError::Parameter("missing classifier.weight".into()))?;
    let classifier_bias =
        classifier_bias.ok_or_else(|| SimError::Parameter("missing classifier.bias".into()))?;
    ClientModel::from_parts(layers, classifier_weight, classifier_bias, input_dim)
}

pub fn load_model(path: &Path) -> Result<ClientModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Parameter(format!("{}: {e}", path.display())))?;
    parse_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hetfed_core::models::build_scenario_models;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = build_scenario_models(&[vec![10, 6]], 8, 4, Activation::Tanh, 99)
            .unwrap()
            .remove(0);
        let text = format_model(&model);
        let loaded = parse_model(&text).unwrap();
        assert_eq!(loaded.input_dim(), 8);
        assert_eq!(loaded.class_count(), 4);
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.data(), b.data());
        }
        // forwards agree bitwise
        let x = Matrix::filled(3, 8, 0.25);
        assert_eq!(
            model.logits(&x).unwrap().data(),
            loaded.logits(&x).unwrap().data()
        );
    }

    #[test]
    fn wrong_magic_is_rejected() {
        assert!(parse_model("NOT-A-MODEL v1\n").is_err());
    }
}
