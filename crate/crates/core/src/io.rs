//! File formats shared with the command-line tool.
//!
//! Every float is written with 17 significant digits so a write/read round
//! trip reproduces the exact `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::evaluation::{CoefficientEnsemble, KmBin, KmField};
use crate::linalg::Matrix;
use crate::model::{Encoder, HyperSindy, Linear, Mlp, ModelConfig, SparseMask};
use crate::training::{EpochRecord, TrainConfig, TrainHistory};

/// Shortest text that round-trips: 17 significant digits in exponent form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: '{s}' is not a number")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{what}: '{s}' is not a count")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn split_rows(text: &str) -> Vec<Vec<&str>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').collect())
        .collect()
}

// ---- trajectories ----

pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let n = traj.state_dim();
    let mut out = String::from("t");
    for j in 1..=n {
        write!(out, ",x{j}").unwrap();
    }
    if traj.derivatives.is_some() {
        for j in 1..=n {
            write!(out, ",dx{j}").unwrap();
        }
    }
    out.push('\n');
    for i in 0..traj.len() {
        out.push_str(&fmt_f64(i as f64 * traj.dt));
        for v in traj.states.row(i) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        if let Some(d) = &traj.derivatives {
            for v in d.row(i) {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let rows = split_rows(text);
    let Some((header, body)) = rows.split_first() else {
        return Err(Error::Contract("trajectory CSV is empty".into()));
    };
    if header.first().map(|h| h.trim()) != Some("t") {
        return Err(Error::Parse("trajectory CSV must start with a 't' column".into()));
    }
    let n = header.iter().filter(|h| h.trim().starts_with('x')).count();
    let nd = header.iter().filter(|h| h.trim().starts_with("dx")).count();
    if n == 0 || (nd != 0 && nd != n) || header.len() != 1 + n + nd {
        return Err(Error::Parse(format!("unrecognized trajectory header {header:?}")));
    }
    if body.len() < 2 {
        return Err(Error::Contract(format!(
            "trajectory CSV needs at least 2 rows, got {}",
            body.len()
        )));
    }
    let mut t = Vec::with_capacity(body.len());
    let mut states = Vec::with_capacity(body.len() * n);
    let mut derivs = Vec::with_capacity(body.len() * nd);
    for (i, row) in body.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Parse(format!("row {} has {} fields, header has {}", i + 1, row.len(), header.len())));
        }
        t.push(parse_f64(row[0], "t")?);
        for v in &row[1..=n] {
            states.push(parse_f64(v, "state")?);
        }
        for v in &row[1 + n..] {
            derivs.push(parse_f64(v, "derivative")?);
        }
    }
    let m = body.len();
    let traj = Trajectory {
        dt: t[1] - t[0],
        states: Matrix::new(m, n, states)?,
        derivatives: if nd > 0 { Some(Matrix::new(m, n, derivs)?) } else { None },
        seed: 0,
        system: None,
    };
    traj.validate()?;
    Ok(traj)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    write_text(path, &trajectory_to_csv(traj))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_csv(&fs::read_to_string(path)?)
}

// ---- checkpoints ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    /// `[in][out]`
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderDoc {
    pub trunk: Vec<LayerDoc>,
    pub head_mu: LayerDoc,
    pub head_logvar: LayerDoc,
}

/// Everything needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub encoder: EncoderDoc,
    pub hypernet: Vec<LayerDoc>,
    pub log_alpha: Vec<Vec<f64>>,
    /// 1 for live gates, 0 for gates removed by thresholding.
    pub permanent_zero: Vec<Vec<u8>>,
    pub train: Option<TrainConfig>,
    pub seed: u64,
}

fn nest(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn unnest(rows: &[Vec<f64>], what: &str) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("{what}: ragged nested list")));
    }
    Tensor::new([rows.len(), cols], rows.concat())
}

fn layer_doc(l: &Linear) -> LayerDoc {
    LayerDoc {
        weight: nest(&l.weight),
        bias: l.bias.data().to_vec(),
    }
}

fn layer_from(doc: &LayerDoc) -> Result<Linear> {
    let w = unnest(&doc.weight, "weight")?;
    let b = Tensor::new([doc.bias.len()], doc.bias.clone())?;
    Linear::from_parts(w, b)
}

impl Checkpoint {
    pub fn from_model(model: &HyperSindy, train: Option<&TrainConfig>, seed: u64) -> Self {
        let e = &model.encoder;
        Self {
            model: model.config,
            encoder: EncoderDoc {
                trunk: e.trunk.layers.iter().map(layer_doc).collect(),
                head_mu: layer_doc(&e.head_mu),
                head_logvar: layer_doc(&e.head_logvar),
            },
            hypernet: model.hypernet.layers.iter().map(layer_doc).collect(),
            log_alpha: nest(&model.mask.log_alpha),
            permanent_zero: nest(&model.mask.permanent_zero)
                .into_iter()
                .map(|r| r.into_iter().map(|v| u8::from(v != 0.0)).collect())
                .collect(),
            train: train.cloned(),
            seed,
        }
    }

    pub fn to_model(&self) -> Result<HyperSindy> {
        let trunk = Mlp {
            layers: self.encoder.trunk.iter().map(layer_from).collect::<Result<_>>()?,
            activate_last: true,
        };
        let encoder = Encoder {
            trunk,
            head_mu: layer_from(&self.encoder.head_mu)?,
            head_logvar: layer_from(&self.encoder.head_logvar)?,
        };
        let hypernet = Mlp {
            layers: self.hypernet.iter().map(layer_from).collect::<Result<_>>()?,
            activate_last: false,
        };
        let keep: Vec<Vec<f64>> = self
            .permanent_zero
            .iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        let mask = SparseMask::from_parts(unnest(&self.log_alpha, "log_alpha")?, unnest(&keep, "permanent_zero")?)?;
        HyperSindy::from_parts(self.model, encoder, hypernet, mask)
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut buf = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats);
        value.serialize(&mut ser)?;
        buf.push(b'\n');
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Compact JSON whose floats carry 17 significant digits.
struct ExactFloats;

impl serde_json::ser::Formatter for ExactFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("cannot store {value} in JSON")));
        }
        writer.write_all(fmt_f64(value).as_bytes())
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_text(path, &ckpt.to_json()?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&fs::read_to_string(path)?)
}

// ---- training history ----

pub const HISTORY_HEADER: &str = "epoch,recon,kl,l0,beta,lambda,active_terms";

pub fn history_to_csv(history: &TrainHistory) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in &history.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            fmt_f64(r.recon),
            fmt_f64(r.kl),
            fmt_f64(r.l0),
            fmt_f64(r.beta),
            fmt_f64(r.lambda),
            r.active_terms
        )
        .unwrap();
    }
    out
}

pub fn history_from_csv(text: &str) -> Result<TrainHistory> {
    let rows = split_rows(text);
    match rows.first() {
        Some(h) if h.join(",") == HISTORY_HEADER => {}
        _ => return Err(Error::Parse(format!("history CSV must start with '{HISTORY_HEADER}'"))),
    }
    let records = rows[1..]
        .iter()
        .map(|r| {
            if r.len() != 7 {
                return Err(Error::Parse(format!("history row has {} fields", r.len())));
            }
            Ok(EpochRecord {
                epoch: parse_usize(r[0], "epoch")?,
                recon: parse_f64(r[1], "recon")?,
                kl: parse_f64(r[2], "kl")?,
                l0: parse_f64(r[3], "l0")?,
                beta: parse_f64(r[4], "beta")?,
                lambda: parse_f64(r[5], "lambda")?,
                active_terms: parse_usize(r[6], "active_terms")?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrainHistory { records })
}

// ---- coefficient ensembles ----

/// Rows are library terms; columns are `mean_xj,std_xj` pairs.
pub fn ensemble_to_csv(ens: &CoefficientEnsemble, names: &[String]) -> Result<String> {
    let (l, n) = ens.mean.shape();
    if names.len() != l {
        return Err(Error::Contract(format!("{} term names for {l} rows", names.len())));
    }
    let mut out = String::from("term");
    for j in 1..=n {
        write!(out, ",mean_x{j},std_x{j}").unwrap();
    }
    out.push('\n');
    for (k, name) in names.iter().enumerate() {
        out.push_str(name);
        for j in 0..n {
            write!(out, ",{},{}", fmt_f64(ens.mean.get(k, j)), fmt_f64(ens.std.get(k, j))).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Term names with mean and std matrices.
pub fn ensemble_from_csv(text: &str) -> Result<(Vec<String>, Matrix, Matrix)> {
    let rows = split_rows(text);
    let Some((header, body)) = rows.split_first() else {
        return Err(Error::Contract("ensemble CSV is empty".into()));
    };
    if header.first() != Some(&"term") || header.len() % 2 != 1 {
        return Err(Error::Parse("ensemble CSV header must be term,mean_x1,std_x1,...".into()));
    }
    let n = (header.len() - 1) / 2;
    let mut names = Vec::new();
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for r in body {
        if r.len() != header.len() {
            return Err(Error::Parse("ragged ensemble row".into()));
        }
        names.push(r[0].to_string());
        for j in 0..n {
            mean.push(parse_f64(r[1 + 2 * j], "mean")?);
            std.push(parse_f64(r[2 + 2 * j], "std")?);
        }
    }
    let l = names.len();
    Ok((names, Matrix::new(l, n, mean)?, Matrix::new(l, n, std)?))
}

// ---- Kramers-Moyal fields ----

pub fn km_to_csv(field: &KmField) -> String {
    let n = field.edges.len();
    let mut cols: Vec<String> = (1..=n).map(|j| format!("bin_center_{j}")).collect();
    cols.push("count".into());
    cols.extend((1..=n).map(|j| format!("drift_{j}")));
    cols.extend((1..=n).map(|j| format!("diff_{j}")));
    let mut out = cols.join(",");
    out.push('\n');
    let absent = vec![f64::NAN; n];
    for b in &field.bins {
        let mut fields: Vec<String> = b.center.iter().map(|&v| fmt_f64(v)).collect();
        fields.push(b.count.to_string());
        fields.extend(b.drift.as_ref().unwrap_or(&absent).iter().map(|&v| fmt_f64(v)));
        fields.extend(b.diffusion.as_ref().unwrap_or(&absent).iter().map(|&v| fmt_f64(v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn km_from_csv(text: &str) -> Result<Vec<KmBin>> {
    let rows = split_rows(text);
    let Some((header, body)) = rows.split_first() else {
        return Err(Error::Contract("K-M CSV is empty".into()));
    };
    if header.len() < 4 || (header.len() - 1) % 3 != 0 {
        return Err(Error::Parse("unrecognized K-M header".into()));
    }
    let n = (header.len() - 1) / 3;
    body.iter()
        .map(|r| {
            if r.len() != header.len() {
                return Err(Error::Parse("ragged K-M row".into()));
            }
            let nums = |range: std::ops::Range<usize>| -> Result<Vec<f64>> {
                r[range].iter().map(|v| parse_f64(v, "K-M value")).collect()
            };
            let drift = nums(n + 1..2 * n + 1)?;
            let diffusion = nums(2 * n + 1..3 * n + 1)?;
            let present = !drift.iter().any(|v| v.is_nan());
            Ok(KmBin {
                center: nums(0..n)?,
                count: parse_usize(r[n], "count")?,
                drift: present.then_some(drift),
                diffusion: present.then_some(diffusion),
            })
        })
        .collect()
}

// ---- equations ----

/// Display threshold for printed coefficients.
pub const PRINT_THRESHOLD: f64 = 0.01;

/// One line per state, `dx1/dt = -9.998 (±0.010) x1 + ...`, skipping terms
/// that are permanently zero or whose mean is below [`PRINT_THRESHOLD`].
pub fn format_equations(model: &HyperSindy, ens: &CoefficientEnsemble) -> String {
    let names = model.library.display_names();
    let (l, n) = ens.mean.shape();
    let mut out = String::new();
    for j in 0..n {
        let mut terms = Vec::new();
        for k in 0..l {
            let m = ens.mean.get(k, j);
            if !model.mask.is_active(k * n + j) || m.abs() < PRINT_THRESHOLD {
                continue;
            }
            let name = if names[k] == "1" { String::new() } else { format!(" {}", names[k]) };
            terms.push(format!("{m:.3} (±{:.3}){name}", ens.std.get(k, j)));
        }
        let rhs = if terms.is_empty() { "0".to_string() } else { terms.join(" + ") };
        writeln!(out, "dx{}/dt = {rhs}", j + 1).unwrap();
    }
    out
}

/// Pretty JSON for summary records.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{estimate_derivatives, simulate, SystemSpec};
    use crate::evaluation::{km_estimate, sample_coefficients};
    use crate::library::LibrarySpec;

    fn model() -> HyperSindy {
        let cfg = ModelConfig {
            library: LibrarySpec::new(2, 2, true).unwrap(),
            latent_dim: 2,
            hidden_width: 4,
            num_hidden: 2,
        };
        let mut m = HyperSindy::new(cfg, 1).unwrap();
        m.mask.zero_out(3);
        m.mask.log_alpha.data_mut()[0] = -0.123456789012345;
        m
    }

    #[test]
    fn float_text_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, -0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn trajectory_round_trip() {
        let spec = SystemSpec::lorenz(1.0);
        let t = estimate_derivatives(&simulate(&spec, &[0.0, 1.0, 1.05], 0.01, 50, 2).unwrap()).unwrap();
        let text = trajectory_to_csv(&t);
        assert!(text.starts_with("t,x1,x2,x3,dx1,dx2,dx3\n"));
        let back = trajectory_from_csv(&text).unwrap();
        assert_eq!(back.states, t.states);
        assert_eq!(back.derivatives, t.derivatives);
        assert_eq!(back.dt, 0.01);
        let bare = Trajectory { derivatives: None, ..t };
        assert!(trajectory_from_csv(&trajectory_to_csv(&bare)).unwrap().derivatives.is_none());
    }

    #[test]
    fn empty_trajectory_is_contract_error() {
        assert!(matches!(trajectory_from_csv(""), Err(Error::Contract(_))));
        assert!(matches!(trajectory_from_csv("t,x1\n0,1\n"), Err(Error::Contract(_))));
        assert!(matches!(trajectory_from_csv("t,x1\n0,1\n1,zz\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = model();
        let ck = Checkpoint::from_model(&m, Some(&TrainConfig::preset("tiny").unwrap()), 7);
        let text = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
        assert_eq!(back.to_json().unwrap(), text);
        assert!(text.contains("-1.2345678901234500e-1"));
    }

    #[test]
    fn checkpoint_rejects_unknown_keys_and_bad_shapes() {
        let ck = Checkpoint::from_model(&model(), None, 0);
        let mut v = serde_json::to_value(&ck).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
        let mut bad = ck.clone();
        bad.log_alpha.pop();
        assert!(bad.to_model().is_err());
    }

    #[test]
    fn history_round_trip() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 3,
                recon: 1.0 / 7.0,
                kl: 0.5,
                l0: 12.25,
                beta: 0.01,
                lambda: 10.0,
                active_terms: 9,
            }],
        };
        let text = history_to_csv(&h);
        assert!(text.starts_with("epoch,recon,kl,l0,beta,lambda,active_terms\n"));
        assert_eq!(history_from_csv(&text).unwrap(), h);
    }

    #[test]
    fn ensemble_round_trip() {
        let m = model();
        let e = sample_coefficients(&m, 5, 0).unwrap();
        let names = m.library.display_names();
        let text = ensemble_to_csv(&e, &names).unwrap();
        assert!(text.starts_with("term,mean_x1,std_x1,mean_x2,std_x2\n"));
        let (n2, mean, std) = ensemble_from_csv(&text).unwrap();
        assert_eq!((n2, mean, std), (names, e.mean, e.std));
    }

    #[test]
    fn km_round_trip() {
        let spec = SystemSpec::lotka_volterra(1.0);
        let t = simulate(&spec, &[4.0, 2.0], 0.01, 3000, 0).unwrap();
        let f = km_estimate(&t, 5, 30).unwrap();
        let text = km_to_csv(&f);
        assert!(text.starts_with("bin_center_1,bin_center_2,count,drift_1,drift_2,diff_1,diff_2\n"));
        assert_eq!(km_from_csv(&text).unwrap(), f.bins);
    }

    #[test]
    fn equations_hide_pruned_terms() {
        let m = model();
        let e = sample_coefficients(&m, 5, 0).unwrap();
        let text = format_equations(&m, &e);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("dx1/dt = "));
        // Entry 3 is row 1 (x1), column 1: pruned from the second equation.
        let second = text.lines().nth(1).unwrap();
        assert!(!second.contains(") x1 ") && !second.ends_with(") x1"));
    }
}
