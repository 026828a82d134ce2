//! Versioned binary checkpoint container.
//!
//! A checkpoint holds the model shape, both players' parameters as raw
//! little-endian `f64`, and (optionally) the trainer position including the
//! RNG state, so that resuming reproduces an uninterrupted run bit for bit.
//! The exact layout is documented in `docs/FORMATS.md`; round trips are
//! bit-exact.

use crate::model::{ModelConfig, TwoPathwayNet};
use crate::trainer::{GanModel, TrainerState};
use crate::{Error, Result};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"CMHK";
const VERSION: u32 = 1;

/// A serializable snapshot of a run: both networks plus optional trainer
/// state (present when taken mid-run at an epoch boundary).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GanModel,
    pub state: Option<TrainerState>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = ckpt.model.config();
    for dim in [
        cfg.image_input_dim,
        cfg.text_input_dim,
        cfg.inter_dim,
        cfg.code_len,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for net in [&ckpt.model.generator, &ckpt.model.discriminator] {
        for v in net.params_flat() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &ckpt.state {
        None => buf.push(0),
        Some(s) => {
            buf.push(1);
            buf.extend_from_slice(&s.epoch.to_le_bytes());
            buf.extend_from_slice(&s.iter.to_le_bytes());
            buf.extend_from_slice(&s.rng_seed);
            buf.extend_from_slice(&s.rng_word_pos.to_le_bytes());
            buf.extend_from_slice(&s.baseline.to_le_bytes());
            buf.extend_from_slice(&s.best_val.to_le_bytes());
            buf.extend_from_slice(&s.evals_since_improve.to_le_bytes());
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let loc = || path.display().to_string();
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::Data(format!("{}: truncated checkpoint", loc())));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };

    if take(&mut off, 4)? != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", loc())));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint version {version}",
            loc()
        )));
    }
    let mut dims = [0u32; 4];
    for d in dims.iter_mut() {
        *d = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    }
    let config = ModelConfig {
        image_input_dim: dims[0] as usize,
        text_input_dim: dims[1] as usize,
        inter_dim: dims[2] as usize,
        code_len: dims[3] as usize,
    };
    config
        .validate()
        .map_err(|e| Error::Data(format!("{}: invalid model shape: {e}", loc())))?;

    let read_net = |off: &mut usize| -> Result<TwoPathwayNet> {
        let mut net = TwoPathwayNet::zeros(&config)?;
        let n = net.params_flat().len();
        let raw = take(off, n * 8)?;
        let flat: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite parameter", loc())));
        }
        net.set_params_flat(&flat)?;
        Ok(net)
    };
    let generator = read_net(&mut off)?;
    let discriminator = read_net(&mut off)?;

    let flag = take(&mut off, 1)?[0];
    let state = match flag {
        0 => None,
        1 => {
            let epoch = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
            let iter = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
            let rng_seed: [u8; 32] = take(&mut off, 32)?.try_into().unwrap();
            let rng_word_pos = u128::from_le_bytes(take(&mut off, 16)?.try_into().unwrap());
            let baseline = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
            let best_val = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
            let evals_since_improve = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
            Some(TrainerState {
                epoch,
                iter,
                rng_seed,
                rng_word_pos,
                baseline,
                best_val,
                evals_since_improve,
            })
        }
        other => {
            return Err(Error::Data(format!(
                "{}: bad trainer-state flag {other}",
                loc()
            )))
        }
    };
    if off != bytes.len() {
        return Err(Error::Data(format!("{}: trailing bytes", loc())));
    }
    Ok(Checkpoint {
        model: GanModel {
            generator,
            discriminator,
        },
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tempfile::TempDir;

    fn sample_checkpoint(with_state: bool) -> Checkpoint {
        let cfg = ModelConfig {
            image_input_dim: 5,
            text_input_dim: 3,
            inter_dim: 4,
            code_len: 8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = GanModel::init(&cfg, &mut rng).unwrap();
        let state = with_state.then(|| TrainerState {
            epoch: 3,
            iter: 107,
            rng_seed: rng.get_seed(),
            rng_word_pos: rng.get_word_pos(),
            baseline: 0.25,
            best_val: f64::NEG_INFINITY,
            evals_since_improve: 1,
        });
        Checkpoint { model, state }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        for with_state in [false, true] {
            let ckpt = sample_checkpoint(with_state);
            let dir = TempDir::new().unwrap();
            let path = dir.path().join("model.ckpt");
            save_checkpoint(&path, &ckpt).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(
                loaded.model.generator.params_flat(),
                ckpt.model.generator.params_flat()
            );
            assert_eq!(
                loaded.model.discriminator.params_flat(),
                ckpt.model.discriminator.params_flat()
            );
            assert_eq!(loaded.state, ckpt.state);
            assert_eq!(loaded.model.config(), ckpt.model.config());

            // saving the loaded checkpoint reproduces identical bytes
            let path2 = dir.path().join("model2.ckpt");
            save_checkpoint(&path2, &loaded).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&path2).unwrap()
            );
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let ckpt = sample_checkpoint(true);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let bad_magic = {
            let mut b = bytes.clone();
            b[0] = b'X';
            b
        };
        std::fs::write(&path, bad_magic).unwrap();
        assert!(load_checkpoint(&path).is_err());

        let truncated = &bytes[..bytes.len() - 7];
        std::fs::write(&path, truncated).unwrap();
        assert!(load_checkpoint(&path).is_err());

        let mut trailing = bytes.clone();
        trailing.push(0);
        std::fs::write(&path, trailing).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
