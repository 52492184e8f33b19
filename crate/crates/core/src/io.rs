//! Line-oriented text formats for model and encoder-output files.
//!
//! Both files are self-describing with explicit dimensions so fixtures stay
//! hand-auditable. Values are written with Rust's shortest round-trip float
//! formatting; a save/load cycle reproduces every matrix bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::joint::JointParams;
use crate::model::{EncoderOutputs, ModelParams, Vocab};
use crate::prediction::PredictionNetParams;

const MODEL_HEADER: &str = "CASCADE-MODEL v1";
const ENCODER_HEADER: &str = "CASCADE-ENCODER v1";

/// Loads and validates a model file.
pub fn load_model(path: &Path) -> Result<ModelParams> {
    let text = read(path)?;
    let mut lines = LineCursor::new(path, &text);

    lines.expect_literal(MODEL_HEADER)?;

    let (line_no, vocab_line) = lines.expect_line("vocab declaration")?;
    let vocab_size = match vocab_line.strip_prefix("vocab ") {
        Some(n) => n
            .trim()
            .parse::<usize>()
            .map_err(|_| lines.err(line_no, format!("bad vocab count {n:?}")))?,
        None => return Err(lines.err(line_no, format!("expected `vocab <n>`, got {vocab_line:?}"))),
    };

    let mut token_strings = Vec::with_capacity(vocab_size);
    for expect_id in 0..vocab_size {
        let (line_no, token_line) = lines.expect_line("token declaration")?;
        let fields: Vec<&str> = token_line.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != "token" {
            return Err(lines.err(
                line_no,
                format!("expected `token <id> <string>`, got {token_line:?}"),
            ));
        }
        let id: usize = fields[1]
            .parse()
            .map_err(|_| lines.err(line_no, format!("bad token id {:?}", fields[1])))?;
        if id != expect_id {
            return Err(lines.err(
                line_no,
                format!("token ids must be dense; expected {expect_id}, got {id}"),
            ));
        }
        token_strings.push(fields[2].to_string());
    }
    let vocab = Vocab::new(token_strings)?;

    let (line_no, dims_line) = lines.expect_line("dims declaration")?;
    let dims = parse_dims(dims_line).ok_or_else(|| {
        lines.err(
            line_no,
            format!("expected `dims d_e=<n> d_h=<n> d_enc=<n> heads=<H> context=<N>`, got {dims_line:?}"),
        )
    })?;
    let [d_e, d_h, d_enc, heads, context] = dims;
    if d_e != d_h {
        return Err(Error::Validation(format!(
            "tying requires d_e=d_h, got d_e={d_e} d_h={d_h}"
        )));
    }
    if heads == 0 || context == 0 {
        return Err(Error::Validation("heads and context must be >= 1".into()));
    }

    let blocks = read_matrix_blocks(&mut lines)?;
    let mut blocks = BlockSet::new(path, blocks);

    let embedding = blocks.take("embedding", vocab_size, d_e)?;
    let mut position_vectors = Array3::zeros((heads, context, d_e));
    for h in 1..=heads {
        for i in 1..=context {
            let pv = blocks.take(&format!("pv_h{h}_p{i}"), 1, d_e)?;
            position_vectors
                .slice_mut(ndarray::s![h - 1, i - 1, ..])
                .assign(&pv.row(0));
        }
    }
    let projection = blocks.take("pred_proj", d_e, d_e)?;
    let pred_bias = blocks.take_vector("pred_bias", d_e)?;
    let enc_proj = blocks.take("joint_enc_proj", d_enc, d_h)?;
    let pred_proj = blocks.take("joint_pred_proj", d_e, d_h)?;
    let joint_bias = blocks.take_vector("joint_bias", d_h)?;
    let blank_row = blocks.take_vector("blank_row", d_h)?;
    blocks.finish()?;

    ModelParams::new(
        vocab,
        PredictionNetParams {
            embedding,
            position_vectors,
            projection,
            bias: pred_bias,
        },
        JointParams {
            enc_proj,
            pred_proj,
            bias: joint_bias,
            blank_row,
        },
    )
}

/// Writes a model file in canonical block order.
pub fn save_model(params: &ModelParams, path: &Path) -> Result<()> {
    let mut out = String::new();
    let v = params.vocab.size();
    let d_e = params.embed_dim();
    let d_h = params.hidden_dim();
    let d_enc = params.enc_dim();
    let heads = params.prediction.num_heads();
    let context = params.prediction.context_size();

    writeln_str(&mut out, MODEL_HEADER);
    writeln_str(&mut out, &format!("vocab {v}"));
    for (id, s) in params.vocab.token_strings().iter().enumerate() {
        writeln_str(&mut out, &format!("token {id} {s}"));
    }
    writeln_str(
        &mut out,
        &format!("dims d_e={d_e} d_h={d_h} d_enc={d_enc} heads={heads} context={context}"),
    );
    write_matrix(&mut out, "embedding", &params.prediction.embedding);
    for h in 1..=heads {
        for i in 1..=context {
            let pv = params
                .prediction
                .position_vectors
                .slice(ndarray::s![h - 1, i - 1, ..]);
            write_row_block(&mut out, &format!("pv_h{h}_p{i}"), pv.as_slice().unwrap());
        }
    }
    write_matrix(&mut out, "pred_proj", &params.prediction.projection);
    write_row_block(
        &mut out,
        "pred_bias",
        params.prediction.bias.as_slice().unwrap(),
    );
    write_matrix(&mut out, "joint_enc_proj", &params.joint.enc_proj);
    write_matrix(&mut out, "joint_pred_proj", &params.joint.pred_proj);
    write_row_block(
        &mut out,
        "joint_bias",
        params.joint.bias.as_slice().unwrap(),
    );
    write_row_block(
        &mut out,
        "blank_row",
        params.joint.blank_row.as_slice().unwrap(),
    );

    write_file(path, &out)
}

/// Loads an encoder-output file.
pub fn load_encoder_outputs(path: &Path) -> Result<EncoderOutputs> {
    let text = read(path)?;
    let mut lines = LineCursor::new(path, &text);
    lines.expect_literal(ENCODER_HEADER)?;

    let (line_no, rc_line) = lines.expect_line("right_context declaration")?;
    let right_context = match rc_line.strip_prefix("right_context ") {
        Some(n) => n
            .trim()
            .parse::<usize>()
            .map_err(|_| lines.err(line_no, format!("bad right_context {n:?}")))?,
        None => {
            return Err(lines.err(
                line_no,
                format!("expected `right_context <R>`, got {rc_line:?}"),
            ))
        }
    };

    let blocks = read_matrix_blocks(&mut lines)?;
    let mut blocks = BlockSet::new(path, blocks);
    let causal = blocks.take_any_shape("causal")?;
    let noncausal = blocks.take_any_shape("noncausal")?;
    blocks.finish()?;

    EncoderOutputs::new(causal, noncausal, right_context)
}

/// Writes an encoder-output file.
pub fn save_encoder_outputs(enc: &EncoderOutputs, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln_str(&mut out, ENCODER_HEADER);
    writeln_str(&mut out, &format!("right_context {}", enc.right_context));
    write_matrix(&mut out, "causal", &enc.causal);
    write_matrix(&mut out, "noncausal", &enc.noncausal);
    write_file(path, &out)
}

fn parse_dims(line: &str) -> Option<[usize; 5]> {
    let mut fields = line.split_whitespace();
    if fields.next()? != "dims" {
        return None;
    }
    let mut out = [0usize; 5];
    let keys = ["d_e", "d_h", "d_enc", "heads", "context"];
    for (slot, key) in out.iter_mut().zip(keys) {
        let field = fields.next()?;
        let value = field.strip_prefix(key)?.strip_prefix('=')?;
        *slot = value.parse().ok()?;
    }
    if fields.next().is_some() {
        return None;
    }
    Some(out)
}

struct LineCursor<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    last_line: usize,
}

impl<'a> LineCursor<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        LineCursor {
            path,
            iter: text.lines().enumerate(),
            last_line: 0,
        }
    }

    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (idx, line) in self.iter.by_ref() {
            self.last_line = idx + 1;
            let trimmed = line.trim_end();
            if !trimmed.trim().is_empty() {
                return Some((idx + 1, trimmed));
            }
        }
        None
    }

    fn expect_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_content()
            .ok_or_else(|| self.err(self.last_line, format!("file truncated; expected {what}")))
    }

    fn expect_literal(&mut self, literal: &str) -> Result<()> {
        let (line_no, line) = self.expect_line(&format!("header {literal:?}"))?;
        if line != literal {
            return Err(self.err(
                line_no,
                format!("expected header {literal:?}, got {line:?}"),
            ));
        }
        Ok(())
    }

    fn err(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message,
        }
    }
}

fn read_matrix_blocks(lines: &mut LineCursor<'_>) -> Result<Vec<(usize, String, Array2<f64>)>> {
    let mut blocks = Vec::new();
    while let Some((line_no, line)) = lines.next_content() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "matrix" {
            return Err(lines.err(
                line_no,
                format!("expected `matrix <name> <rows> <cols>`, got {line:?}"),
            ));
        }
        let name = fields[1].to_string();
        let rows: usize = fields[2]
            .parse()
            .map_err(|_| lines.err(line_no, format!("bad row count {:?}", fields[2])))?;
        let cols: usize = fields[3]
            .parse()
            .map_err(|_| lines.err(line_no, format!("bad column count {:?}", fields[3])))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (row_line_no, row) = lines.expect_line(&format!("row of matrix {name}"))?;
            let values: Vec<&str> = row.split_whitespace().collect();
            if values.len() != cols {
                return Err(lines.err(
                    row_line_no,
                    format!(
                        "matrix {name}: expected {cols} values, got {}",
                        values.len()
                    ),
                ));
            }
            for v in values {
                let x: f64 = v.parse().map_err(|_| {
                    lines.err(row_line_no, format!("matrix {name}: bad value {v:?}"))
                })?;
                if !x.is_finite() {
                    return Err(lines.err(
                        row_line_no,
                        format!("matrix {name}: non-finite value {v:?}"),
                    ));
                }
                data.push(x);
            }
        }
        let m = Array2::from_shape_vec((rows, cols), data).expect("shape matches data");
        blocks.push((line_no, name, m));
    }
    Ok(blocks)
}

struct BlockSet<'a> {
    path: &'a Path,
    by_name: HashMap<String, (usize, Array2<f64>)>,
}

impl<'a> BlockSet<'a> {
    fn new(path: &'a Path, blocks: Vec<(usize, String, Array2<f64>)>) -> Self {
        let mut by_name = HashMap::new();
        for (line, name, m) in blocks {
            // A duplicate keeps the later line number for the error below.
            by_name.insert(name, (line, m));
        }
        BlockSet { path, by_name }
    }

    fn take(&mut self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let (line, m) = self
            .by_name
            .remove(name)
            .ok_or_else(|| Error::Validation(format!("missing matrix {name}")))?;
        if m.dim() != (rows, cols) {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line,
                message: format!(
                    "matrix {name}: expected {rows}x{cols}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                ),
            });
        }
        Ok(m)
    }

    fn take_vector(&mut self, name: &str, len: usize) -> Result<Array1<f64>> {
        let m = self.take(name, 1, len)?;
        Ok(m.row(0).to_owned())
    }

    fn take_any_shape(&mut self, name: &str) -> Result<Array2<f64>> {
        self.by_name
            .remove(name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Validation(format!("missing matrix {name}")))
    }

    fn finish(self) -> Result<()> {
        if let Some((name, (line, _))) = self.by_name.into_iter().next() {
            return Err(Error::Parse {
                path: self.path.to_path_buf(),
                line,
                message: format!("unexpected matrix {name}"),
            });
        }
        Ok(())
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Array2<f64>) {
    writeln_str(out, &format!("matrix {name} {} {}", m.nrows(), m.ncols()));
    for row in m.rows() {
        let line = row
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        writeln_str(out, &line);
    }
}

fn write_row_block(out: &mut String, name: &str, values: &[f64]) {
    writeln_str(out, &format!("matrix {name} 1 {}", values.len()));
    let line = values
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    writeln_str(out, &line);
}

fn writeln_str(out: &mut String, line: &str) {
    let _ = writeln!(out, "{line}");
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
