//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian, strings as `u32` byte
//! length followed by UTF-8:
//!
//! ```text
//! magic      8 bytes  "DEFXCKPT"
//! version    u32      1
//! hyper      string   `key = value` lines
//! schema     string   "basic" | "qualifier"
//! words      u32 n, then n strings (vocabulary minus reserved entries)
//! pos        u32 n, then n strings
//! epoch      u64      epochs completed
//! step       u64      Adam steps taken
//! best_f1    f64      -inf when no dev set was used
//! best_epoch u64
//! stale      u64
//! log        string   epoch log text
//! tensors    u32 n, then n records:
//!              name string, rows u32, cols u32, rows*cols f64 row-major
//! ```
//!
//! Tensor names are the parameter names (`embed.word`, `crf.transitions`,
//! ...), their Adam moments under `adam.m/` and `adam.v/`, and the best dev
//! parameters under `best/`.

use std::io::{self, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::corpus::{TagSchema, TagSet, Vocab};
use crate::model::Model;
use crate::params::{Hyperparams, ModelParams, ModelShape};
use crate::trainer::{AdamState, EpochRecord, TrainState, Trainer};

pub const MAGIC: &[u8; 8] = b"DEFXCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn len(&mut self, n: usize) -> io::Result<()> {
        let n = u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
        self.u32(n)
    }
    fn str(&mut self, s: &str) -> io::Result<()> {
        self.len(s.len())?;
        self.0.write_all(s.as_bytes())
    }
    fn strings(&mut self, items: &[String]) -> io::Result<()> {
        self.len(items.len())?;
        items.iter().try_for_each(|s| self.str(s))
    }
    fn tensor(&mut self, name: &str, t: &Tensor) -> io::Result<()> {
        self.str(name)?;
        self.len(t.rows())?;
        self.len(t.cols())?;
        t.data().iter().try_for_each(|&v| self.f64(v))
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => corrupt("truncated"),
            _ => e.into(),
        })?;
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        let mut buf = Vec::new();
        (&mut self.0).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(corrupt("truncated string"));
        }
        String::from_utf8(buf).map_err(|_| corrupt("string is not UTF-8"))
    }
    fn strings(&mut self) -> Result<Vec<String>, CheckpointError> {
        let n = self.u32()?;
        (0..n).map(|_| self.str()).collect()
    }
    fn tensor(&mut self) -> Result<(String, Tensor), CheckpointError> {
        let name = self.str()?;
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let data = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>, _>>()?;
        let t = Tensor::from_vec(rows, cols, data).map_err(|e| corrupt(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

/// Serializes a model and its training state.
pub fn write_checkpoint<W: Write>(out: W, trainer: &Trainer) -> Result<(), CheckpointError> {
    let mut w = Writer(out);
    let model = &trainer.model;
    let state = &trainer.state;
    w.0.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.str(&model.hyper.to_text())?;
    w.str(model.tagset.schema().name())?;
    w.strings(model.vocab.user_words())?;
    w.strings(model.vocab.user_pos())?;
    w.u64(state.epoch as u64)?;
    w.u64(state.adam.step)?;
    w.f64(state.best_f1)?;
    w.u64(state.best_epoch as u64)?;
    w.u64(state.stale as u64)?;
    w.str(&state.log_text())?;

    let store = &model.params.store;
    let mut tensors: Vec<(String, &Tensor)> = Vec::new();
    for (_, name, t) in store.iter() {
        tensors.push((name.to_string(), t));
    }
    for (id, name, _) in store.iter() {
        tensors.push((format!("adam.m/{name}"), &state.adam.m[id.index()]));
    }
    for (id, name, _) in store.iter() {
        tensors.push((format!("adam.v/{name}"), &state.adam.v[id.index()]));
    }
    if let Some(best) = &state.best {
        for (_, name, t) in best.iter() {
            tensors.push((format!("best/{name}"), t));
        }
    }
    w.len(tensors.len())?;
    for (name, t) in tensors {
        w.tensor(&name, t)?;
    }
    w.0.flush()?;
    Ok(())
}

fn parse_log(text: &str) -> Result<Vec<EpochRecord>, CheckpointError> {
    text.lines()
        .map(|line| {
            let mut f = line.split('\t');
            let (Some(e), Some(l), Some(d), None) = (f.next(), f.next(), f.next(), f.next()) else {
                return Err(corrupt(format!("bad log line {line:?}")));
            };
            let bad = |_| corrupt(format!("bad log line {line:?}"));
            Ok(EpochRecord {
                epoch: e.parse().map_err(|_| corrupt(format!("bad log line {line:?}")))?,
                mean_loss: l.parse().map_err(bad)?,
                dev_f1: if d == "-" { None } else { Some(d.parse().map_err(bad)?) },
            })
        })
        .collect()
}

/// Reads a checkpoint back into a trainer ready to resume.
pub fn read_checkpoint<R: Read>(input: R) -> Result<Trainer, CheckpointError> {
    let mut r = Reader(input);
    if &r.bytes::<8>()? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hyper = Hyperparams::from_text(&r.str()?).map_err(corrupt)?;
    let schema_name = r.str()?;
    let schema = TagSchema::parse(&schema_name).ok_or_else(|| corrupt(format!("unknown tag schema {schema_name:?}")))?;
    let words = r.strings()?;
    let pos = r.strings()?;
    let epoch = r.u64()? as usize;
    let step = r.u64()?;
    let best_f1 = r.f64()?;
    let best_epoch = r.u64()? as usize;
    let stale = r.u64()? as usize;
    let log = parse_log(&r.str()?)?;

    let mut main = ParamStore::new();
    let mut m = ParamStore::new();
    let mut v = ParamStore::new();
    let mut best = ParamStore::new();
    let n = r.u32()?;
    for _ in 0..n {
        let (name, t) = r.tensor()?;
        if let Some(rest) = name.strip_prefix("adam.m/") {
            m.add(rest, t);
        } else if let Some(rest) = name.strip_prefix("adam.v/") {
            v.add(rest, t);
        } else if let Some(rest) = name.strip_prefix("best/") {
            best.add(rest, t);
        } else {
            main.add(name, t);
        }
    }
    let mut trailing = [0u8; 1];
    if r.0.read(&mut trailing)? != 0 {
        return Err(corrupt("trailing bytes"));
    }

    let vocab = Vocab::from_lists(words, pos);
    let tagset = TagSet::new(schema);
    let shape = ModelShape {
        num_words: vocab.num_words(),
        num_pos: vocab.num_pos(),
        num_tags: tagset.len(),
    };
    let mut params = ModelParams::zeros(&hyper, shape);
    params.load_from(&main).map_err(corrupt)?;

    let moments = |src: &ParamStore, what: &str| -> Result<Vec<Tensor>, CheckpointError> {
        let mut aligned = ModelParams::zeros(&hyper, shape);
        aligned.load_from(src).map_err(|e| corrupt(format!("{what}: {e}")))?;
        Ok(aligned.store.iter().map(|(_, _, t)| t.clone()).collect())
    };
    let adam = AdamState {
        m: moments(&m, "adam.m")?,
        v: moments(&v, "adam.v")?,
        step,
    };
    let best = if best.is_empty() {
        None
    } else {
        let mut aligned = ModelParams::zeros(&hyper, shape);
        aligned.load_from(&best).map_err(|e| corrupt(format!("best: {e}")))?;
        Some(aligned.store)
    };

    let model = Model {
        hyper,
        vocab,
        tagset,
        params,
    };
    Ok(Trainer {
        model,
        state: TrainState {
            epoch,
            adam,
            best_f1,
            best_epoch,
            stale,
            best,
            log,
        },
    })
}

pub fn save(path: &Path, trainer: &Trainer) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(io::BufWriter::new(file), trainer)
}

pub fn load(path: &Path) -> Result<Trainer, CheckpointError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(io::BufReader::new(file))
}

pub fn to_bytes(trainer: &Trainer) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, trainer).expect("writing to memory");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::make_synthetic_corpus;
    use crate::trainer::Control;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trained(epochs: usize) -> (Trainer, Vec<crate::model::Example>) {
        let corpus = make_synthetic_corpus(1, 4);
        let vocab = Vocab::build(&corpus);
        let hyper = Hyperparams { epochs, ..Hyperparams::tiny() };
        let model = Model::init(hyper, vocab, TagSet::new(TagSchema::Basic), &mut ChaCha8Rng::seed_from_u64(1));
        let ex = model.examples(&corpus).unwrap();
        let mut t = Trainer::new(model);
        t.train(&ex, Some(&ex), |_, _| Control::Continue).unwrap();
        (t, ex)
    }

    #[test]
    fn round_trip_is_exact() {
        let (t, _) = trained(2);
        let bytes = to_bytes(&t);
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.model, t.model);
        assert_eq!(back.state, t.state);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(read_checkpoint(&b"NOTACKPT\x01\0\0\0"[..]), Err(CheckpointError::BadMagic)));
        let (t, _) = trained(1);
        let mut bytes = to_bytes(&t);
        bytes[8] = 9;
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(CheckpointError::Version(9))));
        let bytes = to_bytes(&t);
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (full, ex) = trained(4);

        let corpus = make_synthetic_corpus(1, 4);
        let vocab = Vocab::build(&corpus);
        let hyper = Hyperparams { epochs: 4, ..Hyperparams::tiny() };
        let model = Model::init(hyper, vocab, TagSet::new(TagSchema::Basic), &mut ChaCha8Rng::seed_from_u64(1));
        let mut interrupted = Trainer::new(model);
        let mut snapshot = Vec::new();
        interrupted
            .train(&ex, Some(&ex), |r, t| {
                if r.epoch == 2 {
                    snapshot = to_bytes(t);
                    Control::Stop
                } else {
                    Control::Continue
                }
            })
            .unwrap();

        let mut resumed = read_checkpoint(snapshot.as_slice()).unwrap();
        assert_eq!(resumed.state.epoch, 2);
        resumed.train(&ex, Some(&ex), |_, _| Control::Continue).unwrap();
        assert_eq!(resumed.state.log, full.state.log);
        assert_eq!(resumed.model.params, full.model.params);
        assert_eq!(to_bytes(&resumed), to_bytes(&full));
    }
}
