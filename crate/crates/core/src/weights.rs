//! Weight file: a safetensors container of little-endian `f32` tensors with
//! string metadata.
//!
//! Tensor names follow `<net>.<part>`:
//!
//! ```text
//! p_l.input.weight [256, 72]      p_l.input.bias [256]
//! p_l.lstm.weight_ih_l0 [1024, 256] ... bias_hh_l1
//! p_l.output.weight [15, 256]     p_l.output.bias [15]
//! i_pl.fc0.weight [256, 15] ... i_pl.fc2.bias [1024]
//! ```
//!
//! Gate order inside the LSTM tensors is input, forget, cell, output.
//! Metadata keys: `format_version`, `num_joints`, `hidden`, `acc_scale`,
//! `x_layout`, `dropout`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::estimator::{Dense, InitFcn, LstmLayer, LstmStack, NetId, Networks, WeightMeta, WEIGHT_FORMAT_VERSION};
use crate::scalar::{lit, to_f64, Scalar};

fn werr(e: impl std::fmt::Display) -> Error {
    Error::Weights(e.to_string())
}

struct Tensor {
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

fn pack<'a, T: Scalar>(values: impl Iterator<Item = &'a T>, shape: Vec<usize>) -> Tensor {
    let bytes = values.flat_map(|v| (to_f64(*v) as f32).to_le_bytes()).collect();
    Tensor { shape, bytes }
}

fn pack_matrix<T: Scalar>(m: &DMatrix<T>) -> Tensor {
    // row-major
    let t = m.transpose();
    pack(t.iter(), vec![m.nrows(), m.ncols()])
}

fn pack_vector<T: Scalar>(v: &DVector<T>) -> Tensor {
    pack(v.iter(), vec![v.len()])
}

fn dense_tensors<T: Scalar>(prefix: &str, d: &Dense<T>, out: &mut Vec<(String, Tensor)>) {
    out.push((format!("{prefix}.weight"), pack_matrix(&d.weight)));
    out.push((format!("{prefix}.bias"), pack_vector(&d.bias)));
}

fn init_name(id: NetId) -> &'static str {
    match id {
        NetId::PL => "i_pl",
        _ => "i_va",
    }
}

pub fn to_bytes<T: Scalar>(nets: &Networks<T>) -> Result<Vec<u8>> {
    nets.validate()?;
    let mut tensors = Vec::new();
    for id in NetId::ALL {
        let net = nets.net(id);
        let name = id.name();
        dense_tensors(&format!("{name}.input"), &net.input, &mut tensors);
        for (k, l) in net.layers.iter().enumerate() {
            tensors.push((format!("{name}.lstm.weight_ih_l{k}"), pack_matrix(&l.w_ih)));
            tensors.push((format!("{name}.lstm.weight_hh_l{k}"), pack_matrix(&l.w_hh)));
            tensors.push((format!("{name}.lstm.bias_ih_l{k}"), pack_vector(&l.b_ih)));
            tensors.push((format!("{name}.lstm.bias_hh_l{k}"), pack_vector(&l.b_hh)));
        }
        dense_tensors(&format!("{name}.output"), &net.output, &mut tensors);
    }
    for (id, fcn) in [(NetId::PL, &nets.init_pl), (NetId::VA, &nets.init_va)] {
        for (k, layer) in fcn.layers.iter().enumerate() {
            dense_tensors(&format!("{}.fc{k}", init_name(id)), layer, &mut tensors);
        }
    }
    let meta = &nets.meta;
    let info: HashMap<String, String> = [
        ("format_version", meta.format_version.to_string()),
        ("num_joints", meta.num_joints.to_string()),
        ("hidden", meta.hidden.to_string()),
        ("acc_scale", format!("{:?}", meta.acc_scale)),
        ("x_layout", meta.x_layout.clone()),
        ("dropout", meta.dropout.clone()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let views: Vec<(String, TensorView<'_>)> = tensors
        .iter()
        .map(|(n, t)| Ok((n.clone(), TensorView::new(Dtype::F32, t.shape.clone(), &t.bytes).map_err(werr)?)))
        .collect::<Result<_>>()?;
    let raw = safetensors::serialize(views, &Some(info)).map_err(werr)?;
    canonical_header(&raw)
}

/// Rewrites the JSON header with sorted keys so equal weights give equal bytes.
fn canonical_header(raw: &[u8]) -> Result<Vec<u8>> {
    fn sorted(v: serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(map) => {
                let ordered: BTreeMap<String, serde_json::Value> = map.into_iter().map(|(k, v)| (k, sorted(v))).collect();
                serde_json::to_value(ordered).expect("map of JSON values")
            }
            other => other,
        }
    }
    let n = u64::from_le_bytes(raw[..8].try_into().map_err(werr)?) as usize;
    let header: serde_json::Value = serde_json::from_slice(&raw[8..8 + n]).map_err(werr)?;
    let ordered: BTreeMap<String, serde_json::Value> = match sorted(header) {
        serde_json::Value::Object(map) => map.into_iter().collect(),
        _ => return Err(Error::Weights("header is not an object".into())),
    };
    let mut text = serde_json::to_vec(&ordered).map_err(werr)?;
    while text.len() % 8 != 0 {
        text.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + text.len() + raw.len() - 8 - n);
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&raw[8 + n..]);
    Ok(out)
}

pub fn save<T: Scalar>(nets: &Networks<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(nets)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    st: SafeTensors<'a>,
}

impl Reader<'_> {
    fn values<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Vec<T>> {
        let t = self.st.tensor(name).map_err(|e| Error::Weights(format!("{name}: {e}")))?;
        if t.dtype() != Dtype::F32 {
            return Err(Error::Weights(format!("{name}: expected F32, found {:?}", t.dtype())));
        }
        if t.shape() != shape {
            return Err(Error::Weights(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t.data()
            .chunks_exact(4)
            .map(|b| lit::<T>(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect())
    }

    fn shape(&self, name: &str) -> Result<Vec<usize>> {
        let t = self.st.tensor(name).map_err(|e| Error::Weights(format!("{name}: {e}")))?;
        Ok(t.shape().to_vec())
    }

    fn matrix<T: Scalar>(&self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<T>> {
        Ok(DMatrix::from_row_slice(rows, cols, &self.values(name, &[rows, cols])?))
    }

    fn vector<T: Scalar>(&self, name: &str, len: usize) -> Result<DVector<T>> {
        Ok(DVector::from_vec(self.values(name, &[len])?))
    }

    fn dense<T: Scalar>(&self, prefix: &str, out: usize, inp: usize) -> Result<Dense<T>> {
        Dense::new(
            self.matrix(&format!("{prefix}.weight"), out, inp)?,
            self.vector(&format!("{prefix}.bias"), out)?,
        )
    }

    /// Dense layer whose shape is read from the file.
    fn dense_any<T: Scalar>(&self, prefix: &str) -> Result<Dense<T>> {
        let s = self.shape(&format!("{prefix}.weight"))?;
        if s.len() != 2 {
            return Err(Error::Weights(format!("{prefix}.weight must be 2-D")));
        }
        self.dense(prefix, s[0], s[1])
    }
}

fn meta_field<'a>(info: &'a HashMap<String, String>, key: &str) -> Result<&'a str> {
    info.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Weights(format!("missing metadata '{key}'")))
}

fn parse<F: std::str::FromStr>(info: &HashMap<String, String>, key: &str) -> Result<F> {
    meta_field(info, key)?
        .parse()
        .map_err(|_| Error::Weights(format!("bad metadata '{key}'")))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Networks<T>> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(werr)?;
    let info = header
        .metadata()
        .clone()
        .ok_or_else(|| Error::Weights("no metadata".into()))?;
    let format_version: u32 = parse(&info, "format_version")?;
    if format_version != WEIGHT_FORMAT_VERSION {
        return Err(Error::Weights(format!(
            "unsupported format_version {format_version} (expected {WEIGHT_FORMAT_VERSION})"
        )));
    }
    let meta = WeightMeta {
        format_version,
        num_joints: parse(&info, "num_joints")?,
        hidden: parse(&info, "hidden")?,
        acc_scale: parse(&info, "acc_scale")?,
        x_layout: meta_field(&info, "x_layout")?.to_string(),
        dropout: meta_field(&info, "dropout")?.to_string(),
    };
    let r = Reader {
        st: SafeTensors::deserialize(bytes).map_err(werr)?,
    };
    let (j, h) = (meta.num_joints, meta.hidden);
    let mut rnns = Vec::new();
    for id in NetId::ALL {
        let name = id.name();
        let mut layers = Vec::new();
        let mut k = 0;
        while r.st.tensor(&format!("{name}.lstm.weight_ih_l{k}")).is_ok() {
            layers.push(LstmLayer {
                w_ih: r.matrix(&format!("{name}.lstm.weight_ih_l{k}"), 4 * h, h)?,
                w_hh: r.matrix(&format!("{name}.lstm.weight_hh_l{k}"), 4 * h, h)?,
                b_ih: r.vector(&format!("{name}.lstm.bias_ih_l{k}"), 4 * h)?,
                b_hh: r.vector(&format!("{name}.lstm.bias_hh_l{k}"), 4 * h)?,
            });
            k += 1;
        }
        rnns.push(LstmStack {
            input: r.dense(&format!("{name}.input"), h, id.in_dim(j))?,
            layers,
            output: r.dense(&format!("{name}.output"), id.out_dim(j), h)?,
            squash: id.squashed(),
        });
    }
    let fcn = |id: NetId| -> Result<InitFcn<T>> {
        let p = init_name(id);
        Ok(InitFcn {
            layers: [
                r.dense_any(&format!("{p}.fc0"))?,
                r.dense_any(&format!("{p}.fc1"))?,
                r.dense_any(&format!("{p}.fc2"))?,
            ],
        })
    };
    let rnns: [LstmStack<T>; 5] = rnns.try_into().map_err(|_| Error::Weights("network count".into()))?;
    let nets = Networks {
        meta,
        rnns,
        init_pl: fcn(NetId::PL)?,
        init_va: fcn(NetId::VA)?,
    };
    nets.validate()?;
    Ok(nets)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Networks<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Seed of the random networks shipped in `assets/weights_h32.safetensors`
/// and used for full-size tests.
pub const GOLDEN_SEED: u64 = 20_240_601;

/// Weights drawn uniformly from `±1/√fan_in`, the usual default for linear
/// and LSTM layers. Values are rounded through `f32` so that a save/load
/// round trip is exact.
pub fn random_networks<T: Scalar>(num_joints: usize, hidden: usize, seed: u64) -> Networks<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets = Networks::<T>::zeros(num_joints, hidden);
    let fill_m = |m: &mut DMatrix<T>, bound: f64, rng: &mut ChaCha8Rng| {
        for v in m.iter_mut() {
            *v = lit(rng.random_range(-bound..bound) as f32 as f64);
        }
    };
    let fill_v = |v: &mut DVector<T>, bound: f64, rng: &mut ChaCha8Rng| {
        for x in v.iter_mut() {
            *x = lit(rng.random_range(-bound..bound) as f32 as f64);
        }
    };
    let dense = |d: &mut Dense<T>, rng: &mut ChaCha8Rng| {
        let bound = 1.0 / (d.in_dim() as f64).sqrt();
        fill_m(&mut d.weight, bound, rng);
        fill_v(&mut d.bias, bound, rng);
    };
    for net in nets.rnns.iter_mut() {
        dense(&mut net.input, &mut rng);
        let bound = 1.0 / (hidden as f64).sqrt();
        for l in net.layers.iter_mut() {
            for m in [&mut l.w_ih, &mut l.w_hh] {
                for v in m.iter_mut() {
                    *v = lit(rng.random_range(-bound..bound) as f32 as f64);
                }
            }
            fill_v(&mut l.b_ih, bound, &mut rng);
            fill_v(&mut l.b_hh, bound, &mut rng);
        }
        dense(&mut net.output, &mut rng);
    }
    for fcn in [&mut nets.init_pl, &mut nets.init_va] {
        for layer in fcn.layers.iter_mut() {
            dense(layer, &mut rng);
        }
    }
    nets
}
