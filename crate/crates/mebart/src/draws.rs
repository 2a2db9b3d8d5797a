//! Posterior-draw persistence: a self-describing binary container plus a
//! JSON sidecar.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "MEBDRAW1"  magic + version
//! u8 mode, u8 method
//! u32 n_chains, u32 n_keep, u32 n_burn, u32 thin
//! u64 seed
//! u32 n_train, u32 p
//! u8 has_scaler [f64 y_min, f64 y_max]
//! u16 n_blocks, then per block:
//!     u8 name_len, name, u64 rows, u64 cols, rows*cols f64 column-major
//! u8 has_ensembles, then per kept draw and tree:
//!     u32 n_nodes; per node u8 tag, leaf: f64 mu,
//!     internal: u32 var, u32 cut, f64 cut_value, u32 left, u32 right
//! ```
//!
//! Blocks: `sigma`, `train_f`, `trace`, optional `latent` and `accept`, and
//! per eval set `em:<name>` (posterior mean) plus `ev:<name>` (per-draw).
//! The decoder validates every length against the remaining input before
//! allocating, and rejects non-tree node graphs, so arbitrary bytes are
//! safe to feed it. Timestamps live only in the sidecar; the container is
//! byte-identical for identical runs.

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::ensemble::{Node, Tree, NIL};
use crate::error::{Error, Result};
use crate::priors::YScaler;
use crate::sampler::{EnsembleDraws, EvalTrace, Method, Mode, PosteriorDraws};

const MAGIC: &[u8; 8] = b"MEBDRAW1";
const MAX_NAME: usize = 64;
const MAX_BLOCKS: usize = 1024;

/// Provenance record stored next to the container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawsSidecar {
    pub format_version: u32,
    pub created_unix: u64,
    pub seed: u64,
    pub library_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl DrawsSidecar {
    pub fn new(seed: u64) -> Self {
        DrawsSidecar {
            format_version: 1,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: None,
            config: None,
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        let mut b = [0u8; 2];
        LittleEndian::write_u16(&mut b, v);
        self.buf.extend_from_slice(&b);
    }
    fn u32(&mut self, v: u32) {
        let mut b = [0u8; 4];
        LittleEndian::write_u32(&mut b, v);
        self.buf.extend_from_slice(&b);
    }
    fn u64(&mut self, v: u64) {
        let mut b = [0u8; 8];
        LittleEndian::write_u64(&mut b, v);
        self.buf.extend_from_slice(&b);
    }
    fn f64(&mut self, v: f64) {
        let mut b = [0u8; 8];
        LittleEndian::write_f64(&mut b, v);
        self.buf.extend_from_slice(&b);
    }
    fn block_from_rows(&mut self, name: &str, rows: usize, cols: usize, row_major: &[f64]) {
        assert!(name.len() <= MAX_NAME);
        assert_eq!(row_major.len(), rows * cols);
        self.u8(name.len() as u8);
        self.buf.extend_from_slice(name.as_bytes());
        self.u64(rows as u64);
        self.u64(cols as u64);
        for j in 0..cols {
            for i in 0..rows {
                self.f64(row_major[i * cols + j]);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::DrawsFormat(format!(
                "truncated container: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.take(2)?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }
}

fn mat_row_major(m: &Array2<f64>) -> Vec<f64> {
    m.iter().cloned().collect()
}

/// Serialize a finished run to bytes.
pub fn encode(draws: &PosteriorDraws) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u8(match draws.mode {
        Mode::Continuous => 0,
        Mode::Probit => 1,
    });
    w.u8(match draws.method {
        Method::Bart => 0,
        Method::Mebart => 1,
    });
    w.u32(draws.n_chains as u32);
    w.u32(draws.n_keep as u32);
    w.u32(draws.n_burn as u32);
    w.u32(draws.thin as u32);
    w.u64(draws.seed);
    let n_train = draws.train_f.ncols();
    let p = draws
        .latent_x
        .as_ref()
        .and_then(|l| l.first())
        .map(|row| if n_train > 0 { row.len() / n_train } else { 0 })
        .unwrap_or(0);
    w.u32(n_train as u32);
    w.u32(p as u32);
    match &draws.y_scale {
        Some(s) => {
            w.u8(1);
            w.f64(s.y_min);
            w.f64(s.y_max);
        }
        None => w.u8(0),
    }

    let n_draws = draws.n_draws();
    let mut blocks: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();
    if !draws.sigma.is_empty() {
        blocks.push(("sigma".into(), draws.sigma.len(), 1, draws.sigma.clone()));
    }
    blocks.push((
        "train_f".into(),
        draws.train_f.nrows(),
        draws.train_f.ncols(),
        mat_row_major(&draws.train_f),
    ));
    for ev in &draws.evals {
        blocks.push((format!("em:{}", ev.name), 1, ev.mean.len(), ev.mean.clone()));
        if let Some(pd) = &ev.per_draw {
            blocks.push((
                format!("ev:{}", ev.name),
                pd.nrows(),
                pd.ncols(),
                mat_row_major(pd),
            ));
        }
    }
    if let Some(latent) = &draws.latent_x {
        let cols = latent.first().map(|r| r.len()).unwrap_or(0);
        let flat: Vec<f64> = latent.iter().flatten().cloned().collect();
        blocks.push(("latent".into(), latent.len(), cols, flat));
    }
    if let Some(acc) = &draws.acceptance {
        blocks.push(("accept".into(), acc.len(), 1, acc.clone()));
    }
    if !draws.sigma_trace.is_empty() {
        let rows = draws.sigma_trace[0].len();
        let cols = draws.sigma_trace.len();
        let mut flat = vec![0.0; rows * cols];
        for (c, chain) in draws.sigma_trace.iter().enumerate() {
            for (r, &v) in chain.iter().enumerate() {
                flat[r * cols + c] = v;
            }
        }
        blocks.push(("trace".into(), rows, cols, flat));
    }
    w.u16(blocks.len() as u16);
    for (name, rows, cols, data) in &blocks {
        w.block_from_rows(name, *rows, *cols, data);
    }

    match &draws.ensembles {
        None => w.u8(0),
        Some(ens) => {
            w.u8(1);
            w.u32(ens.draws.len() as u32);
            let m = ens.draws.first().map(|d| d.len()).unwrap_or(0);
            w.u32(m as u32);
            for draw in &ens.draws {
                assert_eq!(draw.len(), m, "ragged ensemble snapshot");
                for tree in draw {
                    let t = tree.compacted();
                    w.u32(t.capacity() as u32);
                    for id in 0..t.capacity() as u32 {
                        let node = t.node(id);
                        if node.is_leaf() {
                            w.u8(0);
                            w.f64(node.mu);
                        } else {
                            w.u8(1);
                            w.u32(node.var);
                            w.u32(node.cut);
                            w.f64(node.cut_value);
                            w.u32(node.left);
                            w.u32(node.right);
                        }
                    }
                }
            }
        }
    }
    let _ = n_draws;
    w.buf
}

fn read_tree(r: &mut Reader<'_>) -> Result<Tree> {
    let n_nodes = r.u32()? as usize;
    if n_nodes == 0 {
        return Err(Error::DrawsFormat("tree with zero nodes".into()));
    }
    // each serialized node takes at least 9 bytes
    if n_nodes > r.remaining() / 9 + 1 {
        return Err(Error::DrawsFormat(format!(
            "tree node count {n_nodes} exceeds remaining input"
        )));
    }
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let tag = r.u8()?;
        match tag {
            0 => {
                let mu = r.f64()?;
                nodes.push(Node {
                    var: 0,
                    cut: 0,
                    cut_value: 0.0,
                    left: NIL,
                    right: NIL,
                    parent: NIL,
                    depth: 0,
                    mu,
                });
            }
            1 => {
                let var = r.u32()?;
                let cut = r.u32()?;
                let cut_value = r.f64()?;
                let left = r.u32()?;
                let right = r.u32()?;
                if left as usize >= n_nodes || right as usize >= n_nodes || left == right {
                    return Err(Error::DrawsFormat(format!(
                        "child index out of range in tree ({left}, {right}) of {n_nodes}"
                    )));
                }
                nodes.push(Node {
                    var,
                    cut,
                    cut_value,
                    left,
                    right,
                    parent: NIL,
                    depth: 0,
                    mu: 0.0,
                });
            }
            t => return Err(Error::DrawsFormat(format!("unknown node tag {t}"))),
        }
    }
    Tree::from_dense_nodes(nodes)
}

/// Parse a container. Every count is validated against the remaining bytes
/// before any allocation; malformed input yields `Error::DrawsFormat`.
pub fn decode(bytes: &[u8]) -> Result<PosteriorDraws> {
    let mut r = Reader::new(bytes);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::DrawsFormat(
            "bad magic: not a draws container or unsupported version".into(),
        ));
    }
    let mode = match r.u8()? {
        0 => Mode::Continuous,
        1 => Mode::Probit,
        v => return Err(Error::DrawsFormat(format!("unknown mode byte {v}"))),
    };
    let method = match r.u8()? {
        0 => Method::Bart,
        1 => Method::Mebart,
        v => return Err(Error::DrawsFormat(format!("unknown method byte {v}"))),
    };
    let n_chains = r.u32()? as usize;
    let n_keep = r.u32()? as usize;
    let n_burn = r.u32()? as usize;
    let thin = r.u32()? as usize;
    let seed = r.u64()?;
    let _n_train = r.u32()? as usize;
    let _p = r.u32()? as usize;
    let y_scale = match r.u8()? {
        0 => None,
        1 => {
            let y_min = r.f64()?;
            let y_max = r.f64()?;
            Some(YScaler { y_min, y_max })
        }
        v => return Err(Error::DrawsFormat(format!("unknown scaler flag {v}"))),
    };

    let n_blocks = r.u16()? as usize;
    if n_blocks > MAX_BLOCKS {
        return Err(Error::DrawsFormat(format!("too many blocks: {n_blocks}")));
    }
    let mut sigma = Vec::new();
    let mut train_f: Option<Array2<f64>> = None;
    let mut evals: Vec<EvalTrace> = Vec::new();
    let mut latent: Option<Vec<Vec<f64>>> = None;
    let mut acceptance: Option<Vec<f64>> = None;
    let mut sigma_trace: Vec<Vec<f64>> = Vec::new();
    for _ in 0..n_blocks {
        let name_len = r.u8()? as usize;
        if name_len > MAX_NAME {
            return Err(Error::DrawsFormat(format!("block name too long: {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::DrawsFormat("block name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::DrawsFormat("block size overflow".into()))?;
        let bytes_needed = count
            .checked_mul(8)
            .ok_or_else(|| Error::DrawsFormat("block size overflow".into()))?;
        if bytes_needed > r.remaining() {
            return Err(Error::DrawsFormat(format!(
                "block '{name}' claims {bytes_needed} bytes, only {} remain",
                r.remaining()
            )));
        }
        let mut data = vec![0.0f64; count];
        for j in 0..cols {
            for i in 0..rows {
                data[i * cols + j] = r.f64()?;
            }
        }
        match name.as_str() {
            "sigma" => sigma = data,
            "train_f" => {
                train_f = Some(
                    Array2::from_shape_vec((rows, cols), data)
                        .map_err(|e| Error::DrawsFormat(e.to_string()))?,
                )
            }
            "latent" => {
                latent = Some(data.chunks(cols.max(1)).map(|c| c.to_vec()).collect());
            }
            "accept" => acceptance = Some(data),
            "trace" => {
                let mut chains = vec![Vec::with_capacity(rows); cols];
                for i in 0..rows {
                    for (c, chain) in chains.iter_mut().enumerate() {
                        chain.push(data[i * cols + c]);
                    }
                }
                sigma_trace = chains;
            }
            other => {
                if let Some(ev_name) = other.strip_prefix("em:") {
                    evals.push(EvalTrace {
                        name: ev_name.to_string(),
                        per_draw: None,
                        mean: data,
                    });
                } else if let Some(ev_name) = other.strip_prefix("ev:") {
                    let trace = evals.iter_mut().find(|e| e.name == ev_name).ok_or_else(|| {
                        Error::DrawsFormat(format!("per-draw block for unknown eval '{ev_name}'"))
                    })?;
                    trace.per_draw = Some(
                        Array2::from_shape_vec((rows, cols), data)
                            .map_err(|e| Error::DrawsFormat(e.to_string()))?,
                    );
                } else {
                    return Err(Error::DrawsFormat(format!("unknown block '{other}'")));
                }
            }
        }
    }
    let train_f =
        train_f.ok_or_else(|| Error::DrawsFormat("missing train_f block".into()))?;

    let ensembles = match r.u8()? {
        0 => None,
        1 => {
            let n_draws = r.u32()? as usize;
            let m = r.u32()? as usize;
            let per_tree_min = 5usize; // u32 count + one node tag at least
            if n_draws
                .checked_mul(m)
                .map(|t| t.saturating_mul(per_tree_min) > bytes.len())
                .unwrap_or(true)
            {
                return Err(Error::DrawsFormat(
                    "ensemble section larger than input".into(),
                ));
            }
            let mut all = Vec::with_capacity(n_draws);
            for _ in 0..n_draws {
                let mut trees = Vec::with_capacity(m);
                for _ in 0..m {
                    trees.push(read_tree(&mut r)?);
                }
                all.push(trees);
            }
            Some(EnsembleDraws { draws: all })
        }
        v => return Err(Error::DrawsFormat(format!("unknown ensembles flag {v}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::DrawsFormat(format!(
            "{} trailing bytes after container",
            r.remaining()
        )));
    }

    Ok(PosteriorDraws {
        mode,
        method,
        n_chains,
        n_keep,
        n_burn,
        thin,
        seed,
        sigma,
        train_f,
        evals,
        latent_x: latent,
        acceptance,
        sigma_trace,
        ensembles,
        y_scale,
    })
}

/// Write the container and its JSON sidecar (`<path>.meta.json`).
pub fn persist_draws<P: AsRef<Path>>(
    draws: &PosteriorDraws,
    sidecar: &DrawsSidecar,
    path: P,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(draws))?;
    let meta_path = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::DrawsFormat(format!("sidecar serialization: {e}")))?;
    std::fs::write(meta_path, json)?;
    Ok(())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

pub fn load_draws<P: AsRef<Path>>(path: P) -> Result<PosteriorDraws> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

pub fn load_sidecar<P: AsRef<Path>>(container_path: P) -> Result<DrawsSidecar> {
    let text = std::fs::read_to_string(sidecar_path(container_path.as_ref()))?;
    serde_json::from_str(&text).map_err(|e| Error::DrawsFormat(format!("sidecar parse: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::derive_hyperparams;
    use crate::sampler::{run, EvalSet, SamplerConfig};
    use crate::synthetic::{generate, ScenarioSpec, TestFunction};

    fn small_fit(seed: u64) -> (PosteriorDraws, crate::synthetic::SyntheticDataset) {
        let ds = generate(&ScenarioSpec {
            n_train: 30,
            n_test: 10,
            ..ScenarioSpec::defaults(TestFunction::Indicator, seed)
        })
        .unwrap();
        let data = ds.observed_train();
        let mut hp =
            derive_hyperparams(&data, &Default::default(), crate::sampler::Mode::Continuous)
                .unwrap();
        hp.m = 12;
        let cfg = SamplerConfig {
            n_burn: 20,
            n_keep: 25,
            store_ensembles: true,
            ..SamplerConfig::new(crate::sampler::Mode::Continuous, Method::Mebart, seed)
        };
        let evals = vec![EvalSet {
            name: "test".into(),
            points: ds.x_star_test.clone(),
            per_draw: true,
        }];
        (run(&data, &hp, &cfg, &evals).unwrap(), ds)
    }

    fn assert_draws_equal(a: &PosteriorDraws, b: &PosteriorDraws) {
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.train_f, b.train_f);
        assert_eq!(a.latent_x, b.latent_x);
        assert_eq!(a.acceptance, b.acceptance);
        assert_eq!(a.sigma_trace, b.sigma_trace);
        assert_eq!(a.y_scale, b.y_scale);
        assert_eq!(a.evals.len(), b.evals.len());
        for (x, y) in a.evals.iter().zip(&b.evals) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.mean, y.mean);
            assert_eq!(x.per_draw, y.per_draw);
        }
        match (&a.ensembles, &b.ensembles) {
            (Some(x), Some(y)) => {
                assert_eq!(x.draws.len(), y.draws.len());
                for (ta, tb) in x.draws.iter().flatten().zip(y.draws.iter().flatten()) {
                    assert!(ta.structural_eq(tb));
                }
            }
            (None, None) => {}
            _ => panic!("ensemble presence differs"),
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let (draws, _) = small_fit(1);
        let bytes = encode(&draws);
        let back = decode(&bytes).unwrap();
        assert_draws_equal(&draws, &back);
        // and a second encode is byte-identical
        assert_eq!(bytes, encode(&back));
    }

    #[test]
    fn same_seed_same_bytes_different_seed_different_bytes() {
        let (a, _) = small_fit(7);
        let (a2, _) = small_fit(7);
        let (b, _) = small_fit(8);
        assert_eq!(encode(&a), encode(&a2));
        assert_ne!(encode(&a), encode(&b));
    }

    #[test]
    fn reloaded_ensembles_predict_identically() {
        let (draws, ds) = small_fit(3);
        let bytes = encode(&draws);
        let back = decode(&bytes).unwrap();
        let direct = draws.eval_draws(&ds.x_star_test).unwrap();
        let reloaded = back.eval_draws(&ds.x_star_test).unwrap();
        assert_eq!(direct, reloaded);
    }

    #[test]
    fn sidecar_round_trip_records_hash() {
        let (draws, _) = small_fit(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.draws");
        let cfg = crate::config::ExperimentConfig::default();
        let mut sc = DrawsSidecar::new(draws.seed);
        sc.config_hash = Some(cfg.content_hash());
        sc.config = Some(serde_json::to_value(&cfg).unwrap());
        persist_draws(&draws, &sc, &path).unwrap();
        let loaded = load_draws(&path).unwrap();
        assert_draws_equal(&draws, &loaded);
        let side = load_sidecar(&path).unwrap();
        assert_eq!(side.config_hash.unwrap(), cfg.content_hash());
        assert_eq!(side.seed, draws.seed);
    }

    #[test]
    fn corrupt_inputs_are_rejected_not_panicked() {
        let (draws, _) = small_fit(2);
        let bytes = encode(&draws);
        // magic
        assert!(decode(b"NOTADRAW").is_err());
        // truncations at every prefix length of a real container
        for cut in [0, 1, 7, 8, 9, 20, 40, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        // trailing garbage
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(decode(&extended).is_err());
        // flipped block-size byte must not cause a huge allocation
        let mut corrupted = bytes;
        // find the first block's rows field and blow it up
        let name_len = corrupted[8 + 2 + 16 + 8 + 8 + 1 + 16 + 2] as usize;
        let rows_off = 8 + 2 + 16 + 8 + 8 + 1 + 16 + 2 + 1 + name_len;
        for b in &mut corrupted[rows_off..rows_off + 8] {
            *b = 0xff;
        }
        assert!(decode(&corrupted).is_err());
    }
}
