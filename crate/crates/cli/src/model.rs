//! Single models and ensembles behind one interface, and their on-disk form.
//!
//! # File layout
//!
//! All integers and floats are little-endian; `str` is a `u32` byte length
//! followed by UTF-8; `[T; k]` is `k` consecutive values.
//!
//! ```text
//! magic            8 bytes  "BTGPMODL"
//! version          u32      1
//! kind             u8       0 = single model, 1 = ensemble
//! feature count d  u32
//! feature names    [str; d]
//! target name      str
//! precision p      u32
//! bit order        [u32; d·p]
//! min, max         [f64; d], [f64; d]
//! degenerate       [u8; d]
//! has ecdf         u8; if 1, [f64; 11] knots per dimension
//! target mean, std f64, f64
//! rows n           u64
//! features         [f64; n·d] row-major
//! targets          [f64; n]
//! bit words w      u32      words per row
//! training bits    [u64; n·w] row-major, most significant bit first
//! temperature      f64
//! members k        u32
//! per member:
//!   lambda         f64
//!   phi            [f64; d·p]
//!   nll, logdet    f64, f64
//!   z              [f64; n]
//!   inverse C, U   [f64; n·d·p], [f64; n·d·p] column-major
//! mixture weights  [f64; k]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use btgp::encoding::{Ecdf, EncodingConfig, ECDF_KNOTS};
use btgp::gp::{EnsembleMember, EnsembleModel, MixturePrediction, Posterior, PredictiveOutput, TrainedModel, TrainingData};
use btgp::kernel::KernelParams;
use btgp::matrix::ColMatrix;
use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"BTGPMODL";
pub const FORMAT_VERSION: u32 = 1;

/// What to do with query points outside the training box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutOfBox {
    /// Zero their cross-covariance and return the prior.
    Zero,
    /// Refit the box over training and query points, keeping the kernel parameters.
    JointRescale,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(TrainedModel),
    Ensemble(EnsembleModel),
}

/// Predictions plus what is needed to score them.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub output: PredictiveOutput,
    pub mixture: Option<MixturePrediction>,
}

impl Predictions {
    /// Per-point NLL in standardized units.
    pub fn pointwise_nll(&self, y: &[f64]) -> CliResult<Vec<f64>> {
        Ok(match &self.mixture {
            Some(m) => m.pointwise_nll(y)?,
            None => self.output.pointwise_nll(y)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub model: Model,
}

impl Model {
    pub fn data(&self) -> &TrainingData {
        match self {
            Model::Single(m) => &m.data,
            Model::Ensemble(e) => &e.data,
        }
    }

    /// Training NLL in standardized units; for ensembles, that of the best member.
    pub fn train_nll(&self) -> f64 {
        match self {
            Model::Single(m) => m.train_nll(),
            Model::Ensemble(e) => e.members[e.best_member()].posterior.nll,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>, mode: OutOfBox) -> CliResult<Predictions> {
        Ok(match (self, mode) {
            (Model::Single(m), OutOfBox::Zero) => Predictions {
                output: m.predict(x)?,
                mixture: None,
            },
            (Model::Single(m), OutOfBox::JointRescale) => Predictions {
                output: m.predict_joint_rescale(x)?,
                mixture: None,
            },
            (Model::Ensemble(e), mode) => {
                let mix = match mode {
                    OutOfBox::Zero => e.predict(x)?,
                    OutOfBox::JointRescale => e.predict_joint_rescale(x)?,
                };
                Predictions {
                    output: mix.output.clone(),
                    mixture: Some(mix),
                }
            }
        })
    }

    fn posteriors(&self) -> Vec<&Posterior> {
        match self {
            Model::Single(m) => vec![&m.posterior],
            Model::Ensemble(e) => e.members.iter().map(|m| &m.posterior).collect(),
        }
    }
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut bytes.as_slice())
    }

    pub fn write_to(&self, w: &mut impl Write) -> CliResult<()> {
        let data = self.model.data();
        let enc = &data.encoding;
        let n = data.n();
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_u8(matches!(self.model, Model::Ensemble(_)) as u8)?;
        w.write_u32::<LE>(self.feature_names.len() as u32)?;
        for name in &self.feature_names {
            write_str(w, name)?;
        }
        write_str(w, &self.target_name)?;
        w.write_u32::<LE>(enc.precision as u32)?;
        for &b in &enc.bit_order {
            w.write_u32::<LE>(b as u32)?;
        }
        write_f64s(w, &enc.min)?;
        write_f64s(w, &enc.max)?;
        for &flag in &enc.degenerate {
            w.write_u8(flag as u8)?;
        }
        match &enc.ecdf {
            Some(maps) => {
                w.write_u8(1)?;
                for e in maps {
                    write_f64s(w, e.knots())?;
                }
            }
            None => w.write_u8(0)?,
        }
        w.write_f64::<LE>(data.standardizer.mean)?;
        w.write_f64::<LE>(data.standardizer.std)?;
        w.write_u64::<LE>(n as u64)?;
        write_f64s(w, data.x().iter().copied().collect::<Vec<_>>().as_slice())?;
        write_f64s(w, data.y())?;
        let bits = data.bits();
        w.write_u32::<LE>(bits.words_per_row() as u32)?;
        for r in 0..n {
            for &word in bits.row(r) {
                w.write_u64::<LE>(word)?;
            }
        }
        let (temperature, weights) = match &self.model {
            Model::Single(_) => (0.0, vec![1.0]),
            Model::Ensemble(e) => (e.temperature, e.mixture_weights.clone()),
        };
        w.write_f64::<LE>(temperature)?;
        let posteriors = self.model.posteriors();
        w.write_u32::<LE>(posteriors.len() as u32)?;
        for post in posteriors {
            w.write_f64::<LE>(post.params.lambda)?;
            write_f64s(w, &post.params.phi)?;
            w.write_f64::<LE>(post.nll)?;
            w.write_f64::<LE>(post.logdet)?;
            write_f64s(w, &post.z)?;
            write_f64s(w, post.cinv.as_slice())?;
            write_f64s(w, post.uinv.as_slice())?;
        }
        write_f64s(w, &weights)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> CliResult<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(corrupt)?;
        if &magic != MAGIC {
            return Err(CliError::Data("not a model file".into()));
        }
        let version = r.read_u32::<LE>().map_err(corrupt)?;
        if version != FORMAT_VERSION {
            return Err(CliError::Data(format!("unsupported model format version {version}")));
        }
        let kind = r.read_u8().map_err(corrupt)?;
        let d = read_len(r, 1 << 20)?;
        let feature_names = (0..d).map(|_| read_str(r)).collect::<CliResult<Vec<_>>>()?;
        let target_name = read_str(r)?;
        let precision = read_len(r, btgp::encoding::MAX_PRECISION)?;
        let q = d * precision;
        let bit_order = (0..q)
            .map(|_| r.read_u32::<LE>().map(|v| v as usize).map_err(corrupt))
            .collect::<CliResult<Vec<_>>>()?;
        let min = read_f64s(r, d)?;
        let max = read_f64s(r, d)?;
        let degenerate = (0..d)
            .map(|_| r.read_u8().map(|v| v != 0).map_err(corrupt))
            .collect::<CliResult<Vec<_>>>()?;
        let ecdf = match r.read_u8().map_err(corrupt)? {
            0 => None,
            _ => Some(
                (0..d)
                    .map(|_| {
                        let k = read_f64s(r, ECDF_KNOTS)?;
                        Ok(Ecdf::from_knots(k.try_into().expect("fixed length"))?)
                    })
                    .collect::<CliResult<Vec<_>>>()?,
            ),
        };
        let encoding = EncodingConfig {
            dims: d,
            precision,
            bit_order,
            min,
            max,
            degenerate,
            ecdf,
        };
        let (mean, std) = (r.read_f64::<LE>().map_err(corrupt)?, r.read_f64::<LE>().map_err(corrupt)?);
        let n = r.read_u64::<LE>().map_err(corrupt)? as usize;
        let x = Array2::from_shape_vec((n, d), read_f64s(r, n * d)?).map_err(|e| CliError::Data(e.to_string()))?;
        let y = read_f64s(r, n)?;
        let words = r.read_u32::<LE>().map_err(corrupt)? as usize;
        let stored_bits = (0..n * words)
            .map(|_| r.read_u64::<LE>().map_err(corrupt))
            .collect::<CliResult<Vec<_>>>()?;
        let data = TrainingData::with_encoding(x.view(), &y, encoding)?;
        if data.bits().words_per_row() != words || data.bits().words() != stored_bits.as_slice() {
            return Err(CliError::Data("stored training bits do not match the stored features".into()));
        }
        if data.standardizer.mean.to_bits() != mean.to_bits() || data.standardizer.std.to_bits() != std.to_bits() {
            return Err(CliError::Data("stored target standardization does not match the stored targets".into()));
        }
        let temperature = r.read_f64::<LE>().map_err(corrupt)?;
        let k = read_len(r, 1 << 20)?;
        let mut members = Vec::with_capacity(k);
        for _ in 0..k {
            let lambda = r.read_f64::<LE>().map_err(corrupt)?;
            let phi = read_f64s(r, q)?;
            let nll = r.read_f64::<LE>().map_err(corrupt)?;
            let logdet = r.read_f64::<LE>().map_err(corrupt)?;
            let z = read_f64s(r, n)?;
            let cinv = ColMatrix::from_col_major(n, q, read_f64s(r, n * q)?);
            let uinv = ColMatrix::from_col_major(n, q, read_f64s(r, n * q)?);
            members.push(Posterior {
                params: KernelParams::from_phi(&phi, lambda)?,
                z,
                cinv,
                uinv,
                logdet,
                nll,
            });
        }
        let weights = read_f64s(r, k)?;
        let model = match kind {
            0 => {
                let posterior = members
                    .pop()
                    .filter(|_| k == 1)
                    .ok_or_else(|| CliError::Data("single model must have one member".into()))?;
                Model::Single(TrainedModel {
                    data,
                    posterior,
                    report: None,
                })
            }
            1 => Model::Ensemble(EnsembleModel {
                data,
                members: members
                    .into_iter()
                    .map(|posterior| EnsembleMember { posterior, report: None })
                    .collect(),
                mixture_weights: weights,
                temperature,
            }),
            other => return Err(CliError::Data(format!("unknown model kind {other}"))),
        };
        Ok(ModelFile {
            feature_names,
            target_name,
            model,
        })
    }
}

fn corrupt(e: std::io::Error) -> CliError {
    CliError::Data(format!("truncated or corrupt model file: {e}"))
}

fn write_str(w: &mut impl Write, s: &str) -> CliResult<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> CliResult<String> {
    let len = read_len(r, 1 << 20)?;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(corrupt)?;
    String::from_utf8(buf).map_err(|e| CliError::Data(e.to_string()))
}

fn read_len(r: &mut impl Read, limit: usize) -> CliResult<usize> {
    let v = r.read_u32::<LE>().map_err(corrupt)? as usize;
    if v > limit {
        return Err(CliError::Data(format!("length {v} exceeds {limit}")));
    }
    Ok(v)
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> CliResult<()> {
    for &v in values {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, len: usize) -> CliResult<Vec<f64>> {
    let mut out = vec![0.0; len];
    r.read_f64_into::<LE>(&mut out).map_err(corrupt)?;
    Ok(out)
}
