//! Basis persistence in the checkpoint tensor container.
//!
//! Tensors: `eigenvalues` (1×r), `eigenvectors` (N×r), `nodes` (1×N, ids
//! stored as floats). Metadata holds `key=value` lines describing how the
//! basis was produced.

use std::path::Path;

use ctdg::checkpoint::Checkpoint;
use ctdg::params::ParamStore;
use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Result, SpectralError};
use crate::nystrom::{BasisMeta, NystromConfig, SpectralBasis};

pub fn to_checkpoint(basis: &SpectralBasis) -> Checkpoint {
    let (n, r) = basis.vectors.shape();
    let mut store = ParamStore::new();
    store.insert("eigenvalues", Array2::from_shape_vec((1, r), basis.eigenvalues.clone()).expect("r values"));
    store.insert("eigenvectors", Array2::from_shape_fn((n, r), |(i, j)| basis.vectors[(i, j)]));
    store.insert("nodes", Array2::from_shape_fn((1, n), |(_, i)| basis.nodes[i] as f64));
    let m = &basis.meta;
    let mut meta = format!("kind=spectral_basis\nend={}\nfloored={}\n", m.end, m.floored);
    match &m.config {
        Some(c) => meta += &format!("method=nystrom\ns={}\nr={}\np={}\nq={}\nseed={}\npower={}\n", c.s, c.r, c.p, c.q, c.seed, c.power),
        None => meta += "method=exact\n",
    }
    Checkpoint::new(meta, store)
}

pub fn from_checkpoint(ck: &Checkpoint) -> Result<SpectralBasis> {
    let fields: Vec<(&str, &str)> = ck.metadata.lines().filter_map(|l| l.split_once('=')).collect();
    let field = |k: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(key, _)| *key == k)
            .map(|(_, v)| *v)
            .ok_or_else(|| SpectralError::Format(format!("missing metadata `{k}`")))
    };
    let num = |k: &str| -> Result<u64> {
        field(k)?.parse().map_err(|_| SpectralError::Format(format!("metadata `{k}` is not an integer")))
    };
    if field("kind")? != "spectral_basis" {
        return Err(SpectralError::Format("not a spectral basis".into()));
    }
    let end = field("end")?.parse()?;
    let config = match field("method")? {
        "exact" => None,
        "nystrom" => Some(NystromConfig {
            s: num("s")? as usize,
            r: num("r")? as usize,
            p: num("p")? as usize,
            q: num("q")? as usize,
            seed: num("seed")?,
            end,
            power: field("power")?.parse()?,
        }),
        other => return Err(SpectralError::Format(format!("unknown method `{other}`"))),
    };
    let values = ck.tensors.get("eigenvalues")?;
    let vectors = ck.tensors.get("eigenvectors")?;
    let nodes = ck.tensors.get("nodes")?;
    let (n, r) = vectors.dim();
    if values.dim() != (1, r) || nodes.dim() != (1, n) {
        return Err(SpectralError::Format(format!(
            "tensor shapes disagree: eigenvalues {:?}, eigenvectors {:?}, nodes {:?}",
            values.dim(),
            vectors.dim(),
            nodes.dim()
        )));
    }
    Ok(SpectralBasis {
        eigenvalues: values.iter().copied().collect(),
        vectors: DMatrix::from_fn(n, r, |i, j| vectors[[i, j]]),
        nodes: nodes.iter().map(|&x| x as usize).collect(),
        meta: BasisMeta {
            config,
            end,
            floored: num("floored")? as usize,
        },
    })
}

pub fn save(basis: &SpectralBasis, path: impl AsRef<Path>) -> Result<()> {
    Ok(to_checkpoint(basis).save(path)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<SpectralBasis> {
    from_checkpoint(&Checkpoint::load(path)?)
}
