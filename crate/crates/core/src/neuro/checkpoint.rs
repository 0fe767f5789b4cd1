//! Binary parameter checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! u64 network count
//! per network:
//!   u64 layer-size count L
//!   L x u64 layer sizes
//!   P x f64 parameters (P implied by the sizes)
//! ```

use std::io::{Read, Write};

use super::{Mlp, NeuroError};

pub fn write_checkpoint<W: Write>(nets: &[&Mlp], mut out: W) -> Result<(), NeuroError> {
    out.write_all(&(nets.len() as u64).to_le_bytes())?;
    for net in nets {
        out.write_all(&(net.sizes().len() as u64).to_le_bytes())?;
        for &s in net.sizes() {
            out.write_all(&(s as u64).to_le_bytes())?;
        }
        for p in net.params() {
            out.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64, NeuroError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<Mlp>, NeuroError> {
    let count = read_u64(&mut input)?;
    if count > 1024 {
        return Err(NeuroError::Checkpoint(format!("implausible network count {count}")));
    }
    let mut nets = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n_sizes = read_u64(&mut input)?;
        if !(2..=64).contains(&n_sizes) {
            return Err(NeuroError::Checkpoint(format!("implausible layer count {n_sizes}")));
        }
        let sizes = (0..n_sizes)
            .map(|_| read_u64(&mut input).map(|s| s as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let shell = Mlp::zeros(&sizes)?;
        let params = (0..shell.param_count())
            .map(|_| read_u64(&mut input).map(f64::from_bits))
            .collect::<Result<Vec<_>, _>>()?;
        nets.push(Mlp::from_parts(sizes, params)?);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(NeuroError::Checkpoint("trailing bytes".into()));
    }
    Ok(nets)
}
