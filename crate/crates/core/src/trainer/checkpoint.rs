use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::model::Model;
use crate::data::TagScheme;
use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::seq_model::Vocabulary;

pub const CHECKPOINT_MAGIC: &str = "fgkf-checkpoint v1";

/// Text dump: header, config, scheme, vocabulary, then each parameter as a
/// `name rows cols` line followed by its values in row-major order.
pub fn format_checkpoint(model: &Model) -> String {
    let mut out = format!("{CHECKPOINT_MAGIC}\n[config]\n");
    out.push_str(&model.config.to_kv());
    let _ = writeln!(out, "scheme = {}", model.scheme.spec());
    let tokens = model.vocab.known_tokens();
    let _ = writeln!(out, "[vocab] {}", tokens.len());
    for t in tokens {
        let _ = writeln!(out, "{t}");
    }
    let _ = writeln!(out, "[params] {}", model.params.len());
    for (_, p) in model.params.iter() {
        let v = &p.value;
        let _ = writeln!(out, "{} {} {}", p.name, v.rows(), v.cols());
        let row: Vec<String> = v.data().iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, format_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

fn section_count(line: &str, name: &str) -> Option<usize> {
    line.strip_prefix(name)?.trim().parse().ok()
}

/// Rebuilds a model, checking that every stored parameter matches the
/// architecture implied by the stored config.
pub fn parse_checkpoint(text: &str, origin: &Path) -> Result<Model> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().map(|l| l.trim()) != Some(CHECKPOINT_MAGIC) {
        return Err(err(1, format!("missing `{CHECKPOINT_MAGIC}` header")));
    }
    if lines.get(1).map(|l| l.trim()) != Some("[config]") {
        return Err(err(2, "expected [config]".into()));
    }
    let mut cfg = TrainConfig::default();
    let mut scheme = None;
    let mut i = 2;
    while i < lines.len() && !lines[i].starts_with("[vocab]") {
        let (k, v) = lines[i]
            .split_once('=')
            .ok_or_else(|| err(i + 1, format!("expected `key = value`, got `{}`", lines[i])))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "scheme" {
            scheme = Some(TagScheme::parse(v).map_err(|e| err(i + 1, e.to_string()))?);
        } else {
            cfg.set(k, v).map_err(|e| err(i + 1, e.to_string()))?;
        }
        i += 1;
    }
    let scheme = scheme.ok_or_else(|| err(i + 1, "config has no scheme".into()))?;
    let nv = lines
        .get(i)
        .and_then(|l| section_count(l, "[vocab]"))
        .ok_or_else(|| err(i + 1, "expected `[vocab] <count>`".into()))?;
    i += 1;
    if i + nv > lines.len() {
        return Err(err(lines.len(), "truncated vocabulary".into()));
    }
    let vocab = Vocabulary::from_tokens(lines[i..i + nv].iter().copied());
    if vocab.len() != nv + 2 {
        return Err(err(i + 1, "vocabulary has duplicate or reserved tokens".into()));
    }
    i += nv;
    let np = lines
        .get(i)
        .and_then(|l| section_count(l, "[params]"))
        .ok_or_else(|| err(i + 1, "expected `[params] <count>`".into()))?;
    i += 1;
    let mut model = Model::new(&cfg, vocab, scheme, &mut ChaCha8Rng::seed_from_u64(0))?;
    if np != model.params.len() {
        return Err(err(
            i,
            format!("{np} parameters stored, architecture has {}", model.params.len()),
        ));
    }
    for _ in 0..np {
        let head: Vec<&str> = lines
            .get(i)
            .ok_or_else(|| err(i + 1, "truncated parameters".into()))?
            .split_whitespace()
            .collect();
        let [name, r, c] = head[..] else {
            return Err(err(i + 1, "expected `name rows cols`".into()));
        };
        let (r, c): (usize, usize) = match (r.parse(), c.parse()) {
            (Ok(r), Ok(c)) => (r, c),
            _ => return Err(err(i + 1, "bad parameter shape".into())),
        };
        let id = model
            .params
            .id(name)
            .map_err(|_| err(i + 1, format!("unknown parameter `{name}`")))?;
        let expected = model.params.value(id).shape().to_vec();
        if expected != [r, c] {
            return Err(err(
                i + 1,
                format!("parameter `{name}` has shape [{r}, {c}], expected {expected:?}"),
            ));
        }
        let values = lines
            .get(i + 1)
            .ok_or_else(|| err(i + 2, "truncated parameters".into()))?
            .split_whitespace()
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(i + 2, format!("bad value in `{name}`: {e}")))?;
        if values.len() != r * c {
            return Err(err(i + 2, format!("`{name}` has {} values, expected {}", values.len(), r * c)));
        }
        model.params.get_mut(id).value = Array::matrix(r, c, values)?;
        i += 2;
    }
    Ok(model)
}
